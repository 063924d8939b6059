#include "stainkit/vahadane.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "stainkit/error.hpp"
#include "stainkit/rng.hpp"

namespace stainkit {

namespace {

constexpr double kRankTol = 1e-8;
constexpr double kScaleFloor = 1e-6;
constexpr std::uint64_t kSaltSubsample = 1;

// Conventional H&E OD colors, unit norm; deterministic fallback when the
// plane-angle initialization collapses.
const Eigen::Vector3d kCanonicalHematoxylin(0.6511078257574492, 0.7011930431234068,
                                            0.29049426072255424);
const Eigen::Vector3d kCanonicalEosin(0.0701017212973667, 0.9914386297770432,
                                      0.1101598477530048);

using Matrix32 = Eigen::Matrix<double, 3, 2>;
using Matrix2X = Eigen::Matrix<double, 2, Eigen::Dynamic>;
using Matrix3X = Eigen::Matrix<double, 3, Eigen::Dynamic>;

// Exact 2-variable non-negative lasso by coordinate descent. Assumes unit
// columns, so each coordinate update is a closed-form soft threshold. The
// sweep objective is non-increasing, which the alternating solver relies on.
inline void solve_pixel(double g0, double g1, double rho, double half_lambda, double& h0,
                        double& h1) {
  for (int sweep = 0; sweep < 500; ++sweep) {
    const double n0 = std::max(0.0, g0 - rho * h1 - half_lambda);
    const double n1 = std::max(0.0, g1 - rho * n0 - half_lambda);
    const double delta = std::max(std::abs(n0 - h0), std::abs(n1 - h1));
    h0 = n0;
    h1 = n1;
    if (delta <= 1e-12) break;
  }
}

// Warm-started coding pass over all columns of V.
void solve_concentrations(const Matrix3X& v, const Matrix32& w, double lambda, Matrix2X& h) {
  const double rho = w.col(0).dot(w.col(1));
  const double half_lambda = 0.5 * lambda;
  for (Eigen::Index i = 0; i < v.cols(); ++i) {
    const double g0 = w.col(0).dot(v.col(i));
    const double g1 = w.col(1).dot(v.col(i));
    solve_pixel(g0, g1, rho, half_lambda, h(0, i), h(1, i));
  }
}

double snmf_objective(const Matrix3X& v, const Matrix32& w, const Matrix2X& h, double lambda) {
  return (v - w * h).squaredNorm() + lambda * h.sum();
}

Eigen::Vector3d orient(Eigen::Vector3d e) {
  int argmax = 0;
  e.cwiseAbs().maxCoeff(&argmax);
  return e[argmax] < 0.0 ? Eigen::Vector3d(-e) : e;
}

// Plane-angle initialization: project tissue OD onto the top-2 eigenvector
// plane of the second-moment matrix and take the 1st/99th percentile of the
// in-plane angles as the two stain directions.
Matrix32 initialize_dictionary(const Matrix3X& v) {
  const Eigen::Matrix3d moments = v * v.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(moments);
  const double sigma1 = std::sqrt(std::max(0.0, eig.eigenvalues()[2]));
  const double sigma2 = std::sqrt(std::max(0.0, eig.eigenvalues()[1]));
  if (sigma2 <= kRankTol * std::max(1.0, sigma1))
    raise(Errc::DegenerateInput, "tissue OD matrix has rank < 2");

  const Eigen::Vector3d e1 = orient(eig.eigenvectors().col(2));
  const Eigen::Vector3d e2 = orient(eig.eigenvectors().col(1));

  std::vector<double> angles(static_cast<std::size_t>(v.cols()));
  for (Eigen::Index i = 0; i < v.cols(); ++i)
    angles[static_cast<std::size_t>(i)] = std::atan2(e2.dot(v.col(i)), e1.dot(v.col(i)));
  std::sort(angles.begin(), angles.end());

  const auto percentile = [&](double q) {
    const auto idx = static_cast<std::size_t>(
        std::llround(q * static_cast<double>(angles.size() - 1)));
    return angles[std::min(idx, angles.size() - 1)];
  };

  const auto direction = [&](double phi) -> Eigen::Vector3d {
    Eigen::Vector3d u = (std::cos(phi) * e1 + std::sin(phi) * e2).cwiseMax(0.0);
    const double norm = u.norm();
    return norm < 1e-8 ? kCanonicalHematoxylin : Eigen::Vector3d(u / norm);
  };

  Matrix32 w;
  w.col(0) = direction(percentile(0.01));
  w.col(1) = direction(percentile(0.99));
  if (w.col(0).dot(w.col(1)) > 1.0 - 1e-6) {
    w.col(0) = kCanonicalHematoxylin;
    w.col(1) = kCanonicalEosin;
  }
  return w;
}

// Hematoxylin first: descending blue-channel entry, ties by red ascending.
void order_columns(Matrix32& w) {
  const bool swap =
      w(2, 0) < w(2, 1) || (w(2, 0) == w(2, 1) && w(0, 0) > w(0, 1));
  if (swap) w.col(0).swap(w.col(1));
}

StainMatrix to_stain_matrix(const Matrix32& w) {
  StainMatrix m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) m.w[r][c] = w(r, c);
  m.validate();
  return m;
}

Matrix32 from_stain_matrix(const StainMatrix& m) {
  Matrix32 w;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) w(r, c) = m.w[r][c];
  return w;
}

}  // namespace

void StainMatrix::validate() const {
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) {
      if (!std::isfinite(w[r][c]) || w[r][c] < 0.0)
        raise(Errc::InvalidArgument, "stain matrix entries must be finite and >= 0");
    }
  for (int c = 0; c < 2; ++c) {
    const double norm = std::sqrt(w[0][c] * w[0][c] + w[1][c] * w[1][c] + w[2][c] * w[2][c]);
    if (std::abs(norm - 1.0) > 1e-6)
      raise(Errc::InvalidArgument, "stain matrix columns must have unit norm");
  }
  if (w[2][0] < w[2][1])
    raise(Errc::InvalidArgument, "stain columns must be ordered hematoxylin first");
}

void StainModel::validate() const {
  stains.validate();
  for (double s : scale)
    if (!std::isfinite(s) || s <= 0.0)
      raise(Errc::InvalidArgument, "concentration scale must be finite and > 0");
}

void to_json(nlohmann::json& j, const StainModel& model) {
  j = nlohmann::json{{"stains", model.stains.w}, {"scale", model.scale}};
}

void from_json(const nlohmann::json& j, StainModel& model) {
  j.at("stains").get_to(model.stains.w);
  j.at("scale").get_to(model.scale);
}

StainMatrix estimate_stain_matrix(const OdImage& od, const TissueMask& mask, double lambda,
                                  int iters, std::uint64_t seed,
                                  std::vector<double>* objective_trace) {
  if (od.width() != mask.width() || od.height() != mask.height())
    raise(Errc::InvalidArgument, "mask dimensions do not match image");
  if (lambda < 0.0) raise(Errc::InvalidArgument, "lambda must be >= 0");
  if (iters < 1) raise(Errc::InvalidArgument, "iters must be >= 1");
  if (mask.tissue_count() < static_cast<std::size_t>(kMinTissuePixels))
    raise(Errc::InsufficientTissue,
          "need at least " + std::to_string(kMinTissuePixels) + " tissue pixels, got " +
              std::to_string(mask.tissue_count()));

  std::vector<std::size_t> indices;
  indices.reserve(mask.tissue_count());
  const auto bits = mask.bits();
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) indices.push_back(i);

  // Seeded uniform subsample, decided up front so any later parallelism
  // cannot change which pixels the dictionary sees.
  if (indices.size() > kDictionarySubsample) {
    SplitMix64 rng(derive_stream_seed(seed, 0, kSaltSubsample));
    for (std::size_t i = 0; i < kDictionarySubsample; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.next_below(indices.size() - i));
      std::swap(indices[i], indices[j]);
    }
    indices.resize(kDictionarySubsample);
    std::sort(indices.begin(), indices.end());
  }

  Matrix3X v(3, static_cast<Eigen::Index>(indices.size()));
  const auto values = od.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& p = values[indices[i]];
    v.col(static_cast<Eigen::Index>(i)) = Eigen::Vector3d(p[0], p[1], p[2]);
  }

  Matrix32 w = initialize_dictionary(v);
  Matrix2X h = Matrix2X::Zero(2, v.cols());
  solve_concentrations(v, w, lambda, h);

  double obj = snmf_objective(v, w, h, lambda);
  if (objective_trace) objective_trace->push_back(obj);

  for (int iter = 0; iter < iters; ++iter) {
    // Projected-gradient dictionary step. Renormalization is compensated by
    // scaling the H rows inversely, and the step is backtracked until the
    // full objective does not increase, so the trace stays monotone.
    const Matrix32 grad = 2.0 * (w * h - v) * h.transpose();
    const Eigen::Matrix2d hht = h * h.transpose();
    const double lipschitz =
        2.0 * Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(hht).eigenvalues().maxCoeff();

    if (lipschitz > 0.0) {
      const auto try_step = [&](double eta, Matrix32& wn, Matrix2X& hn) {
        const Matrix32 candidate = (w - eta * grad).cwiseMax(0.0);
        const double c0 = candidate.col(0).norm();
        const double c1 = candidate.col(1).norm();
        if (c0 < 1e-12 || c1 < 1e-12) return std::numeric_limits<double>::infinity();
        wn.col(0) = candidate.col(0) / c0;
        wn.col(1) = candidate.col(1) / c1;
        hn = h;
        hn.row(0) *= c0;
        hn.row(1) *= c1;
        return snmf_objective(v, wn, hn, lambda);
      };

      double step = 1.0 / lipschitz;
      Matrix32 best_w;
      Matrix2X best_h;
      double best_obj = std::numeric_limits<double>::infinity();
      int backtracks = 0;
      for (; backtracks < 60; ++backtracks, step *= 0.5) {
        if ((best_obj = try_step(step, best_w, best_h)) <= obj + 1e-12) break;
      }
      if (best_obj <= obj + 1e-12) {
        // The Lipschitz bound can be loose; expand while it keeps improving.
        if (backtracks == 0) {
          for (double eta = step * 2.0; eta <= step * 1024.0; eta *= 2.0) {
            Matrix32 wn;
            Matrix2X hn;
            const double candidate_obj = try_step(eta, wn, hn);
            if (candidate_obj < best_obj - 1e-15) {
              best_w = wn;
              best_h = std::move(hn);
              best_obj = candidate_obj;
            } else {
              break;
            }
          }
        }
        w = best_w;
        h = std::move(best_h);
      }
    }

    solve_concentrations(v, w, lambda, h);
    obj = snmf_objective(v, w, h, lambda);
    if (objective_trace) objective_trace->push_back(obj);
  }

  order_columns(w);
  return to_stain_matrix(w);
}

ConcentrationMap compute_concentrations(const OdImage& od, const StainMatrix& stains,
                                        double lambda) {
  if (lambda < 0.0) raise(Errc::InvalidArgument, "lambda must be >= 0");
  stains.validate();

  const Matrix32 w = from_stain_matrix(stains);
  const double rho = w.col(0).dot(w.col(1));
  const double half_lambda = 0.5 * lambda;

  ConcentrationMap map;
  map.width = od.width();
  map.height = od.height();
  map.h.resize(od.values().size());

  const auto values = od.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Eigen::Vector3d v(values[i][0], values[i][1], values[i][2]);
    double h0 = 0.0, h1 = 0.0;
    solve_pixel(w.col(0).dot(v), w.col(1).dot(v), rho, half_lambda, h0, h1);
    map.h[i] = {h0, h1};
  }
  return map;
}

namespace {

double percentile99(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  const auto idx = static_cast<std::size_t>(
      std::llround(0.99 * static_cast<double>(values.size() - 1)));
  return values[std::min(idx, values.size() - 1)];
}

}  // namespace

StainModel fit_stain_model(const RgbImage& image, double lambda, int iters, std::uint64_t seed,
                           double od_threshold) {
  const OdImage od = rgb_to_od(image);
  const TissueMask mask = tissue_mask(image, od_threshold);
  StainModel model;
  model.stains = estimate_stain_matrix(od, mask, lambda, iters, seed);

  // Scale statistics use debiased (lambda = 0) coding so the lasso shrinkage
  // regularizes the dictionary only, not the reconstruction magnitudes.
  const Matrix32 w = from_stain_matrix(model.stains);
  const double rho = w.col(0).dot(w.col(1));

  std::vector<double> h0s, h1s;
  h0s.reserve(mask.tissue_count());
  h1s.reserve(mask.tissue_count());
  const auto values = od.values();
  const auto bits = mask.bits();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!bits[i]) continue;
    const Eigen::Vector3d v(values[i][0], values[i][1], values[i][2]);
    double h0 = 0.0, h1 = 0.0;
    solve_pixel(w.col(0).dot(v), w.col(1).dot(v), rho, 0.0, h0, h1);
    h0s.push_back(h0);
    h1s.push_back(h1);
  }
  model.scale = {std::max(kScaleFloor, percentile99(h0s)),
                 std::max(kScaleFloor, percentile99(h1s))};
  return model;
}

RgbImage vahadane_normalize(const RgbImage& image, const StainModel& target, double lambda,
                            int iters, std::uint64_t seed, double od_threshold) {
  const StainModel source = fit_stain_model(image, lambda, iters, seed, od_threshold);
  return vahadane_normalize_with_source(image, source, target);
}

RgbImage vahadane_normalize_with_source(const RgbImage& image, const StainModel& source,
                                        const StainModel& target) {
  source.validate();
  target.validate();

  // Debiased coding, matching the convention behind StainModel::scale.
  const OdImage od = rgb_to_od(image);
  const ConcentrationMap concentrations = compute_concentrations(od, source.stains, 0.0);
  const double ratio0 = target.scale[0] / source.scale[0];
  const double ratio1 = target.scale[1] / source.scale[1];
  const Matrix32 wt = from_stain_matrix(target.stains);

  std::vector<std::array<double, 3>> out(concentrations.h.size());
  for (std::size_t i = 0; i < concentrations.h.size(); ++i) {
    const double h0 = concentrations.h[i][0] * ratio0;
    const double h1 = concentrations.h[i][1] * ratio1;
    const Eigen::Vector3d v = wt.col(0) * h0 + wt.col(1) * h1;
    out[i] = {v[0], v[1], v[2]};
  }
  return od_to_rgb(OdImage(image.width(), image.height(), std::move(out)));
}

}  // namespace stainkit
