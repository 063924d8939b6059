#include "stainkit/reinhard.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "stainkit/error.hpp"

namespace stainkit {

namespace {

// Reinhard's published RGB->LMS matrix, applied to [0,1] RGB without gamma
// linearization; log base 10 throughout.
const Eigen::Matrix3d kRgbToLms = (Eigen::Matrix3d() <<  //
                                       0.3811, 0.5783, 0.0402,
                                       0.1967, 0.7244, 0.0782,
                                       0.0241, 0.1288, 0.8444).finished();

const Eigen::Matrix3d kLmsToRgb = kRgbToLms.inverse();

Eigen::Matrix3d make_log_lms_to_lab() {
  Eigen::Matrix3d decorrelate;
  decorrelate << 1, 1, 1, 1, 1, -2, 1, -1, 0;
  const Eigen::Vector3d scale(1.0 / std::sqrt(3.0), 1.0 / std::sqrt(6.0), 1.0 / std::sqrt(2.0));
  return scale.asDiagonal() * decorrelate;
}

const Eigen::Matrix3d kLogLmsToLab = make_log_lms_to_lab();
const Eigen::Matrix3d kLabToLogLms = kLogLmsToLab.inverse();

}  // namespace

void ReinhardStats::validate() const {
  for (int c = 0; c < 3; ++c) {
    if (!std::isfinite(mean[c])) raise(Errc::InvalidArgument, "ReinhardStats mean not finite");
    if (!std::isfinite(std[c]) || std[c] < 0.0)
      raise(Errc::InvalidArgument, "ReinhardStats std must be finite and >= 0");
  }
}

void to_json(nlohmann::json& j, const ReinhardStats& stats) {
  j = nlohmann::json{{"mean", stats.mean}, {"std", stats.std}};
}

void from_json(const nlohmann::json& j, ReinhardStats& stats) {
  j.at("mean").get_to(stats.mean);
  j.at("std").get_to(stats.std);
}

LabField rgb_to_lalphabeta(const RgbImage& image) {
  LabField field;
  field.width = image.width();
  field.height = image.height();
  field.values.resize(image.pixel_count());

  auto pixels = image.pixels();
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const Rgb8 p = pixels[i];
    const Eigen::Vector3d rgb(p.r / kMaxIntensity, p.g / kMaxIntensity, p.b / kMaxIntensity);
    Eigen::Vector3d lms = (kRgbToLms * rgb).cwiseMax(kEpsLms);
    const Eigen::Vector3d log_lms = lms.array().log10();
    const Eigen::Vector3d lab = kLogLmsToLab * log_lms;
    field.values[i] = {lab[0], lab[1], lab[2]};
  }
  return field;
}

RgbImage lalphabeta_to_rgb(const LabField& field) {
  if (field.width < 1 || field.height < 1 ||
      field.values.size() != static_cast<std::size_t>(field.width) * field.height)
    raise(Errc::InvalidArgument, "malformed lab field");

  std::vector<Rgb8> pixels(field.values.size());
  for (std::size_t i = 0; i < field.values.size(); ++i) {
    const auto& v = field.values[i];
    const Eigen::Vector3d lab(v[0], v[1], v[2]);
    // Exponent clamp keeps far-out-of-gamut inputs finite; the RGB clamp
    // below is what the contract guarantees (clamp, never wrap).
    const Eigen::Vector3d log_lms = (kLabToLogLms * lab).cwiseMin(30.0).cwiseMax(-30.0);
    const Eigen::Vector3d lms = Eigen::pow(10.0, log_lms.array());
    const Eigen::Vector3d rgb = (kLmsToRgb * lms).cwiseMin(1.0).cwiseMax(0.0);
    pixels[i] = Rgb8{static_cast<std::uint8_t>(std::round(rgb[0] * kMaxIntensity)),
                     static_cast<std::uint8_t>(std::round(rgb[1] * kMaxIntensity)),
                     static_cast<std::uint8_t>(std::round(rgb[2] * kMaxIntensity))};
  }
  return RgbImage(field.width, field.height, std::move(pixels));
}

namespace {

ReinhardStats stats_of_field(const LabField& field, const TissueMask* mask) {
  if (mask && (mask->width() != field.width || mask->height() != field.height))
    raise(Errc::InvalidArgument, "mask dimensions do not match image");
  if (mask && mask->tissue_count() == 0)
    raise(Errc::EmptyMask, "tissue mask has zero tissue pixels");

  // Two-pass mean / population variance, accumulated in row-major order so
  // results do not depend on scheduling.
  double sum[3] = {0, 0, 0};
  std::size_t n = 0;
  for (std::size_t i = 0; i < field.values.size(); ++i) {
    if (mask && !mask->bits()[i]) continue;
    for (int c = 0; c < 3; ++c) sum[c] += field.values[i][c];
    ++n;
  }
  ReinhardStats stats;
  for (int c = 0; c < 3; ++c) stats.mean[c] = sum[c] / static_cast<double>(n);

  double sq[3] = {0, 0, 0};
  for (std::size_t i = 0; i < field.values.size(); ++i) {
    if (mask && !mask->bits()[i]) continue;
    for (int c = 0; c < 3; ++c) {
      const double d = field.values[i][c] - stats.mean[c];
      sq[c] += d * d;
    }
  }
  for (int c = 0; c < 3; ++c) stats.std[c] = std::sqrt(sq[c] / static_cast<double>(n));
  return stats;
}

}  // namespace

ReinhardStats fit_reinhard_stats(const RgbImage& image, const TissueMask* mask) {
  return stats_of_field(rgb_to_lalphabeta(image), mask);
}

RgbImage reinhard_transfer(const RgbImage& image, const ReinhardStats& target,
                           const TissueMask* mask, double eps_std) {
  if (!(eps_std > 0.0)) raise(Errc::InvalidArgument, "eps_std must be positive");
  target.validate();

  LabField field = rgb_to_lalphabeta(image);
  const ReinhardStats source = stats_of_field(field, mask);

  double scale[3], shift[3];
  for (int c = 0; c < 3; ++c) {
    scale[c] = target.std[c] / std::max(source.std[c], eps_std);
    shift[c] = target.mean[c];
  }
  for (auto& v : field.values)
    for (int c = 0; c < 3; ++c) v[c] = (v[c] - source.mean[c]) * scale[c] + shift[c];

  return lalphabeta_to_rgb(field);
}

}  // namespace stainkit
