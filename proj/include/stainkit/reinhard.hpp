#pragma once

#include <array>
#include <vector>

#include "json.hpp"
#include "stainkit/image.hpp"

namespace stainkit {

/// Per-channel mean and population standard deviation in Ruderman lab space
/// (log-LMS decorrelated; not CIELAB).
struct ReinhardStats {
  std::array<double, 3> mean{};
  std::array<double, 3> std{};

  /// Throws InvalidArgument when a component is non-finite or std < 0.
  void validate() const;

  friend bool operator==(const ReinhardStats&, const ReinhardStats&) = default;
};

void to_json(nlohmann::json& j, const ReinhardStats& stats);
void from_json(const nlohmann::json& j, ReinhardStats& stats);

/// Per-pixel lab triples, row-major.
struct LabField {
  int width = 0;
  int height = 0;
  std::vector<std::array<double, 3>> values;
};

inline constexpr double kEpsLms = 1e-6;
inline constexpr double kEpsStd = 1e-6;

LabField rgb_to_lalphabeta(const RgbImage& image);
RgbImage lalphabeta_to_rgb(const LabField& field);

/// Statistics over tissue pixels when a mask is given, over all pixels
/// otherwise. Throws EmptyMask for a mask with zero tissue pixels.
ReinhardStats fit_reinhard_stats(const RgbImage& image, const TissueMask* mask = nullptr);

/// Mean/variance color transfer. The mask affects source statistics only;
/// every pixel is transformed (normalizing only masked pixels creates seams).
RgbImage reinhard_transfer(const RgbImage& image, const ReinhardStats& target,
                           const TissueMask* mask = nullptr, double eps_std = kEpsStd);

}  // namespace stainkit
