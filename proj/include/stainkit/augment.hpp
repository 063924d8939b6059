#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stainkit/corpus.hpp"

namespace stainkit {

enum class Method { Reinhard, Vahadane };
enum class GeomTransform { None, HFlip, VFlip, Rot90, Rot180, Rot270 };

const char* method_name(Method m);
const char* geom_name(GeomTransform g);

struct AugmentConfig {
  double p_reinhard = 0.5;     // Vahadane chosen with 1 - p_reinhard
  double enlarge_factor = 1.0;
  std::uint64_t seed = 0;
  double lambda = kDefaultLambda;
  int iters = kDefaultIters;
  bool geometric = true;

  /// Throws InvalidArgument unless 0 <= p_reinhard <= 1 and enlarge_factor >= 0.
  void validate() const;
};

/// One sampled target style: exactly one of reinhard_target / stain_target is
/// present, matching method.
struct TargetParams {
  Method method = Method::Reinhard;
  std::optional<ReinhardStats> reinhard_target;
  std::optional<StainModel> stain_target;
  GeomTransform geom = GeomTransform::None;
};

nlohmann::json params_to_json(const TargetParams& params);

/// Draws a target style from the (enlarged, clamped) ranges. The RNG stream
/// is derived from (config.seed, image_index) only, so draws are reproducible
/// regardless of batch scheduling. Sampled stain columns are renormalized to
/// unit length; a column with norm < 1e-8 before renormalization is resampled
/// up to 16 times, then DegenerateSample is thrown.
TargetParams sample_target_params(const ParameterRanges& ranges, const AugmentConfig& config,
                                  std::uint64_t image_index);

/// Exact pixel permutation; rot90/rot270 swap the output dimensions.
RgbImage geometric_augment(const RgbImage& image, GeomTransform geom);

/// Dispatches to reinhard_transfer or vahadane_normalize with the sampled
/// target, then applies the geometric transform.
RgbImage apply_stain_augmentation(const RgbImage& image, const TargetParams& params,
                                  const AugmentConfig& config);

struct ManifestEntry {
  std::string input;
  std::string output;  // empty when this item failed
  TargetParams params;
  std::string error;   // empty on success
};

struct AugmentManifest {
  std::vector<ManifestEntry> entries;  // input order: item (i, c) at i*copies + c
};

/// Augments each input copies_per_image times, writing
/// out_dir/<stem>_aug<c>.png. image_index = i*copies_per_image + c. Items run
/// in parallel; outputs and the manifest are identical for any thread count.
/// Per-item failures are recorded in the manifest, not fatal.
AugmentManifest augment_batch(const std::vector<std::filesystem::path>& inputs,
                              const CorpusStats& stats, const AugmentConfig& config,
                              const std::filesystem::path& out_dir, int copies_per_image = 1,
                              int threads = 1);

/// CSV with header input,output,method,geom,params_json. Failure rows leave
/// output empty and carry an "error" key inside params_json.
void write_manifest_csv(const AugmentManifest& manifest, const std::filesystem::path& path);

}  // namespace stainkit
