#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "json.hpp"
#include "stainkit/image.hpp"

namespace stainkit {

/// 3x2 stain color appearance matrix. Columns are unit-norm nonnegative OD
/// colors; column 0 is hematoxylin-like (larger blue-channel entry), column 1
/// eosin-like.
struct StainMatrix {
  std::array<std::array<double, 2>, 3> w{};  // w[channel][stain], channels r,g,b

  std::array<double, 3> column(int k) const { return {w[0][k], w[1][k], w[2][k]}; }

  /// Throws InvalidArgument when entries are negative, columns are not unit
  /// norm (tol 1e-6), or the hematoxylin-first ordering is broken.
  void validate() const;

  friend bool operator==(const StainMatrix&, const StainMatrix&) = default;
};

/// Per-pixel stain concentrations, row-major, nonnegative.
struct ConcentrationMap {
  int width = 0;
  int height = 0;
  std::vector<std::array<double, 2>> h;
};

/// Stain matrix plus per-stain 99th-percentile concentration over tissue.
struct StainModel {
  StainMatrix stains;
  std::array<double, 2> scale{};  // > 0

  void validate() const;

  friend bool operator==(const StainModel&, const StainModel&) = default;
};

void to_json(nlohmann::json& j, const StainModel& model);
void from_json(const nlohmann::json& j, StainModel& model);

inline constexpr double kDefaultLambda = 0.1;
inline constexpr int kDefaultIters = 50;
inline constexpr int kMinTissuePixels = 100;
inline constexpr std::size_t kDictionarySubsample = 20000;

/// Sparse NMF of tissue OD: approximately minimizes
///   sum_pixels ||v - W h||^2 + lambda * ||h||_1,  W, h >= 0, unit columns,
/// by alternating exact per-pixel non-negative lasso and a backtracked
/// projected-gradient dictionary update with per-column renormalization.
/// The dictionary is fitted on a seeded uniform subsample of at most
/// kDictionarySubsample tissue pixels. If objective_trace is non-null, the
/// objective after the initial coding pass and after every iteration is
/// appended; the sequence is non-increasing.
/// Throws InsufficientTissue (< kMinTissuePixels tissue pixels) and
/// DegenerateInput (tissue OD matrix rank < 2 within tol 1e-8).
StainMatrix estimate_stain_matrix(const OdImage& od, const TissueMask& mask, double lambda,
                                  int iters, std::uint64_t seed,
                                  std::vector<double>* objective_trace = nullptr);

/// Per-pixel non-negative lasso h = argmin_{h>=0} ||v - W h||^2 + lambda*|h|_1,
/// solved to stationarity by 2-variable coordinate descent.
ConcentrationMap compute_concentrations(const OdImage& od, const StainMatrix& stains,
                                        double lambda);

/// Fits the stain matrix and the per-stain 99th-percentile concentration
/// scale (floored at 1e-6) over tissue pixels. The tissue mask is computed
/// internally with the imagecore defaults (od_threshold overridable). lambda
/// regularizes the dictionary estimation; the scale percentiles use debiased
/// (lambda = 0) coding so shrinkage cannot bias reconstruction magnitudes.
StainModel fit_stain_model(const RgbImage& image, double lambda = kDefaultLambda,
                           int iters = kDefaultIters, std::uint64_t seed = 0,
                           double od_threshold = kDefaultOdThreshold);

/// Structure-preserving normalization: source concentrations are rescaled by
/// target.scale / source.scale and recombined with the target stain matrix.
/// All pixels are transformed; pure-white pixels stay white.
RgbImage vahadane_normalize(const RgbImage& image, const StainModel& target,
                            double lambda = kDefaultLambda, int iters = kDefaultIters,
                            std::uint64_t seed = 0,
                            double od_threshold = kDefaultOdThreshold);

/// Same as vahadane_normalize but with a precomputed source model, so batch
/// callers can fit each input once and reuse it across copies.
RgbImage vahadane_normalize_with_source(const RgbImage& image, const StainModel& source,
                                        const StainModel& target);

}  // namespace stainkit
