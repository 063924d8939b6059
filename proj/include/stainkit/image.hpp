#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace stainkit {

struct Rgb8 {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb8&, const Rgb8&) = default;
};

/// 8-bit 3-channel raster tile, row-major.
class RgbImage {
 public:
  RgbImage(int width, int height, std::vector<Rgb8> pixels);

  static RgbImage filled(int width, int height, Rgb8 color);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept { return pixels_.size(); }

  const Rgb8& at(int x, int y) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
  Rgb8& at(int x, int y) { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<const Rgb8> pixels() const noexcept { return pixels_; }
  std::span<Rgb8> pixels() noexcept { return pixels_; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  int width_;
  int height_;
  std::vector<Rgb8> pixels_;
};

/// Per-channel optical density, row-major. Values are nonnegative and finite.
class OdImage {
 public:
  OdImage(int width, int height, std::vector<std::array<double, 3>> values);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  const std::array<double, 3>& at(int x, int y) const {
    return values_[static_cast<std::size_t>(y) * width_ + x];
  }

  std::span<const std::array<double, 3>> values() const noexcept { return values_; }
  std::span<std::array<double, 3>> values() noexcept { return values_; }

 private:
  int width_;
  int height_;
  std::vector<std::array<double, 3>> values_;
};

/// Row-major tissue bitmap; dimensions always match the source image.
class TissueMask {
 public:
  TissueMask(int width, int height, std::vector<std::uint8_t> bits);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  std::size_t tissue_count() const noexcept { return tissue_count_; }

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> bits_;
  std::size_t tissue_count_;
};

inline constexpr double kMaxIntensity = 255.0;
inline constexpr double kDefaultOdEps = 1.0;
inline constexpr double kDefaultOdThreshold = 0.15;

/// Reads an 8-bit PNG or TIFF tile. Alpha channels are dropped; grayscale,
/// palette and non-8-bit inputs are rejected.
RgbImage load_image(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG. The destination directory must exist.
void save_image(const RgbImage& image, const std::filesystem::path& path);

/// Beer-Lambert transform: od = -log10(max(v, eps) / i0), clamped to >= 0.
OdImage rgb_to_od(const RgbImage& image, double i0 = kMaxIntensity, double eps = kDefaultOdEps);

/// Inverse transform: v = round(i0 * 10^(-od)) clamped to [0, 255]; rounding
/// ties go half away from zero so outputs are bit-exact across platforms.
RgbImage od_to_rgb(const OdImage& od, double i0 = kMaxIntensity);

/// Tissue = mean channel OD above threshold, computed with eps = 1, i0 = 255.
/// An all-background mask is legal output.
TissueMask tissue_mask(const RgbImage& image, double od_threshold = kDefaultOdThreshold);

}  // namespace stainkit
