#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "stainkit/reinhard.hpp"
#include "stainkit/vahadane.hpp"

namespace stainkit {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const { return lo <= v && v <= hi; }
  double midpoint() const { return 0.5 * (lo + hi); }

  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Min/max interval per scalar parameter of both normalization methods,
/// fitted over a corpus. stain_entries is row-major over the 3x2 matrix.
struct ParameterRanges {
  std::array<Interval, 3> reinhard_mean{};
  std::array<Interval, 3> reinhard_std{};
  std::array<Interval, 6> stain_entries{};
  std::array<Interval, 2> conc_scale{};

  /// Throws SchemaError naming the interval when lo > hi or a domain clamp
  /// (std/stain >= 0, scale > 0) is violated.
  void validate() const;

  friend bool operator==(const ParameterRanges&, const ParameterRanges&) = default;
};

struct ImageStats {
  std::string id;
  ReinhardStats reinhard;
  StainModel stain;
};

struct SkippedImage {
  std::string path;
  std::string reason;
};

struct CorpusStats {
  std::vector<ImageStats> per_image;  // sorted by id
  ParameterRanges ranges;             // elementwise min/max over per_image at fit time
  std::vector<SkippedImage> skipped;
  std::string fitted_at;              // tool version + parameters (no timestamp)
};

/// Fits per-image ReinhardStats (tissue-masked) and StainModel over a corpus
/// and aggregates elementwise min/max ranges. Images that fail (IO errors,
/// InsufficientTissue, ...) are skipped and reported, not fatal. The same
/// seed is used for every image so results are independent of list order.
/// Throws NoUsableImages when every image was skipped.
CorpusStats fit_corpus_stats(const std::vector<std::filesystem::path>& image_paths,
                             double lambda = kDefaultLambda, int iters = kDefaultIters,
                             std::uint64_t seed = 0, int threads = 1,
                             double od_threshold = kDefaultOdThreshold);

/// Symmetric enlargement about each interval midpoint: [lo,hi] ->
/// [c - f*w, c + f*w] with c the midpoint and w the half-width, then clamped
/// to the parameter's domain (std/stain lo floored at 0, scale lo at 1e-6).
/// factor 1 is the identity; factor 0 collapses intervals to their midpoints.
ParameterRanges enlarge_ranges(const ParameterRanges& ranges, double factor);

/// The 14 fitted scalars of one image in range order: reinhard mean (3),
/// reinhard std (3), stain entries row-major (6), concentration scale (2).
std::array<double, 14> parameter_vector(const ImageStats& stats);

void save_corpus_stats(const CorpusStats& stats, const std::filesystem::path& path);

/// Loads and re-validates all type invariants; unknown extra fields are
/// ignored for forward compatibility. Throws SchemaError with the offending
/// field path, or IoError / FileNotFound.
CorpusStats load_corpus_stats(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const CorpusStats& stats);
void from_json(const nlohmann::json& j, CorpusStats& stats);

}  // namespace stainkit
