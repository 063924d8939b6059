#pragma once

#include <Eigen/Dense>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "stainkit/image.hpp"
#include "stainkit/rng.hpp"

namespace testutil {

namespace fs = std::filesystem;

/// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<unsigned> counter{0};
    path_ = fs::temp_directory_path() /
            ("stainkit_test_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline Eigen::Matrix<double, 3, 2> canonical_stains() {
  Eigen::Matrix<double, 3, 2> w;
  w.col(0) = Eigen::Vector3d(0.65, 0.70, 0.29).normalized();
  w.col(1) = Eigen::Vector3d(0.07, 0.99, 0.11).normalized();
  return w;
}

/// Quantizes an OD triple to the nearest 8-bit RGB value (inline so tests do
/// not depend on the library's od_to_rgb).
inline stainkit::Rgb8 od_to_rgb8(const Eigen::Vector3d& od) {
  auto q = [](double v) {
    const double x = std::round(255.0 * std::pow(10.0, -v));
    return static_cast<std::uint8_t>(std::clamp(x, 0.0, 255.0));
  };
  return {q(od[0]), q(od[1]), q(od[2])};
}

struct SyntheticStainImage {
  stainkit::RgbImage image;
  Eigen::Matrix<double, 3, 2> w_true;
  std::vector<std::array<double, 2>> h_true;  // row-major
};

/// Two-stain synthetic tile: OD = W_true * H_true with H_true >= 0.05 drawn
/// uniformly, quantized to 8-bit RGB. The low floor keeps near-pure pixels in
/// the data, so the tightest cone around it comes close to the generators.
inline SyntheticStainImage make_two_stain_image(
    int width, int height, std::uint64_t seed,
    const Eigen::Matrix<double, 3, 2>& w = canonical_stains()) {
  stainkit::SplitMix64 rng(seed);
  std::vector<stainkit::Rgb8> pixels(static_cast<std::size_t>(width) * height);
  std::vector<std::array<double, 2>> h(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double h0 = rng.uniform(0.05, 1.2);
    const double h1 = rng.uniform(0.05, 0.8);
    h[i] = {h0, h1};
    pixels[i] = od_to_rgb8(w.col(0) * h0 + w.col(1) * h1);
  }
  return {stainkit::RgbImage(width, height, std::move(pixels)), w, std::move(h)};
}

/// Random RGB tile with all channels inside [lo, hi].
inline stainkit::RgbImage make_random_image(int width, int height, std::uint64_t seed,
                                            int lo = 40, int hi = 215) {
  stainkit::SplitMix64 rng(seed);
  std::vector<stainkit::Rgb8> pixels(static_cast<std::size_t>(width) * height);
  for (auto& p : pixels) {
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    p.r = static_cast<std::uint8_t>(lo + rng.next_below(span));
    p.g = static_cast<std::uint8_t>(lo + rng.next_below(span));
    p.b = static_cast<std::uint8_t>(lo + rng.next_below(span));
  }
  return stainkit::RgbImage(width, height, std::move(pixels));
}

inline double column_angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double c = std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

/// Brute-force 2-D grid search of the non-negative lasso objective
/// ||v - W h||^2 + lambda*(h0+h1). Grid bounds follow from h_k* <= w_k.v.
inline std::array<double, 2> lasso_grid_search(const Eigen::Vector3d& v,
                                               const Eigen::Matrix<double, 3, 2>& w,
                                               double lambda, double step = 1e-3) {
  const double q01 = w.col(0).dot(w.col(1));
  const double b0 = w.col(0).dot(v);
  const double b1 = w.col(1).dot(v);
  const double c = v.squaredNorm();
  const auto n0 = static_cast<long>(std::floor(std::max(0.0, b0) / step)) + 2;
  const auto n1 = static_cast<long>(std::floor(std::max(0.0, b1) / step)) + 2;

  double best = std::numeric_limits<double>::infinity();
  std::array<double, 2> arg{0.0, 0.0};
  for (long i = 0; i <= n0; ++i) {
    const double h0 = static_cast<double>(i) * step;
    const double base = h0 * h0 - 2.0 * b0 * h0 + lambda * h0 + c;
    const double cross = 2.0 * (q01 * h0 - b1) + lambda;
    for (long j = 0; j <= n1; ++j) {
      const double h1 = static_cast<double>(j) * step;
      const double obj = base + h1 * h1 + cross * h1;
      if (obj < best) {
        best = obj;
        arg = {h0, h1};
      }
    }
  }
  return arg;
}

/// Maximum one-to-one matching cardinality within radius (sets of size <= ~16).
inline int max_matching_bruteforce(const std::vector<std::pair<double, double>>& gt,
                                   const std::vector<std::pair<double, double>>& pred,
                                   double radius) {
  std::vector<unsigned> adj(pred.size(), 0);
  for (std::size_t p = 0; p < pred.size(); ++p)
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double dx = pred[p].first - gt[g].first;
      const double dy = pred[p].second - gt[g].second;
      if (dx * dx + dy * dy <= radius * radius) adj[p] |= 1u << g;
    }
  std::vector<int> memo;
  const auto recurse = [&](auto&& self, std::size_t p, unsigned used) -> int {
    if (p == pred.size()) return 0;
    int best = self(self, p + 1, used);
    for (unsigned m = adj[p] & ~used; m != 0; m &= m - 1) {
      const unsigned bit = m & ~(m - 1);
      best = std::max(best, 1 + self(self, p + 1, used | bit));
    }
    return best;
  };
  return recurse(recurse, 0, 0u);
}

// ---- minimal TIFF builder (independent of the reader) ----

struct TiffOptions {
  int bits = 8;
  std::uint16_t compression = 1;  // 1 none, 8 deflate
  std::uint16_t predictor = 1;
  int samples_per_pixel = 3;
  bool big_endian = false;
  std::uint32_t rows_per_strip = 0;  // 0 = single strip
};

std::vector<std::uint8_t> build_tiff(int width, int height,
                                     const std::vector<stainkit::Rgb8>& pixels,
                                     const TiffOptions& options = {});

inline void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testutil
