#include "stainkit/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <variant>

#include "stainkit/error.hpp"
#include "stainkit/parallel.hpp"
#include "stainkit/version.hpp"

namespace stainkit {

namespace {

constexpr double kScaleFloor = 1e-6;

struct RangeField {
  const char* name;
  std::size_t offset;  // into the 14-scalar parameter vector
  std::size_t count;
  double domain_floor;  // lower clamp; -inf when unconstrained
};

constexpr double kNoFloor = -std::numeric_limits<double>::infinity();

const RangeField kRangeFields[4] = {
    {"reinhard_mean", 0, 3, kNoFloor},
    {"reinhard_std", 3, 3, 0.0},
    {"stain_entries", 6, 6, 0.0},
    {"conc_scale", 12, 2, kScaleFloor},
};

Interval* intervals_of(ParameterRanges& r, std::size_t field) {
  switch (field) {
    case 0: return r.reinhard_mean.data();
    case 1: return r.reinhard_std.data();
    case 2: return r.stain_entries.data();
    default: return r.conc_scale.data();
  }
}

const Interval* intervals_of(const ParameterRanges& r, std::size_t field) {
  return intervals_of(const_cast<ParameterRanges&>(r), field);
}

}  // namespace

void ParameterRanges::validate() const {
  for (std::size_t f = 0; f < 4; ++f) {
    const RangeField& field = kRangeFields[f];
    const Interval* iv = intervals_of(*this, f);
    for (std::size_t i = 0; i < field.count; ++i) {
      const std::string where = "ranges." + std::string(field.name) + "[" + std::to_string(i) + "]";
      if (!std::isfinite(iv[i].lo) || !std::isfinite(iv[i].hi))
        raise(Errc::SchemaError, where + ": interval bounds must be finite");
      if (iv[i].lo > iv[i].hi) raise(Errc::SchemaError, where + ": lo > hi");
      if (field.domain_floor == 0.0 && iv[i].lo < 0.0)
        raise(Errc::SchemaError, where + ": lo must be >= 0");
      if (field.domain_floor > 0.0 && iv[i].lo <= 0.0)
        raise(Errc::SchemaError, where + ": lo must be > 0");
    }
  }
}

std::array<double, 14> parameter_vector(const ImageStats& stats) {
  std::array<double, 14> v{};
  for (int c = 0; c < 3; ++c) v[c] = stats.reinhard.mean[c];
  for (int c = 0; c < 3; ++c) v[3 + c] = stats.reinhard.std[c];
  std::size_t k = 6;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) v[k++] = stats.stain.stains.w[r][c];
  v[12] = stats.stain.scale[0];
  v[13] = stats.stain.scale[1];
  return v;
}

namespace {

ParameterRanges ranges_from_stats(const std::vector<ImageStats>& per_image) {
  ParameterRanges ranges;
  for (std::size_t f = 0; f < 4; ++f) {
    const RangeField& field = kRangeFields[f];
    Interval* iv = intervals_of(ranges, f);
    for (std::size_t i = 0; i < field.count; ++i)
      iv[i] = {std::numeric_limits<double>::infinity(),
               -std::numeric_limits<double>::infinity()};
  }
  for (const ImageStats& stats : per_image) {
    const auto v = parameter_vector(stats);
    for (std::size_t f = 0; f < 4; ++f) {
      const RangeField& field = kRangeFields[f];
      Interval* iv = intervals_of(ranges, f);
      for (std::size_t i = 0; i < field.count; ++i) {
        iv[i].lo = std::min(iv[i].lo, v[field.offset + i]);
        iv[i].hi = std::max(iv[i].hi, v[field.offset + i]);
      }
    }
  }
  return ranges;
}

}  // namespace

CorpusStats fit_corpus_stats(const std::vector<std::filesystem::path>& image_paths,
                             double lambda, int iters, std::uint64_t seed, int threads,
                             double od_threshold) {
  if (image_paths.empty()) raise(Errc::InvalidArgument, "need at least one image path");

  struct Slot {
    std::optional<ImageStats> stats;
    std::optional<SkippedImage> skipped;
  };
  std::vector<Slot> slots(image_paths.size());

  // The same seed goes to every image so fitted values, and therefore the
  // min/max ranges, are independent of list order.
  parallel_for(image_paths.size(), threads, [&](std::size_t i) {
    const auto& path = image_paths[i];
    try {
      const RgbImage image = load_image(path);
      const TissueMask mask = tissue_mask(image, od_threshold);
      if (mask.tissue_count() < static_cast<std::size_t>(kMinTissuePixels))
        raise(Errc::InsufficientTissue,
              "only " + std::to_string(mask.tissue_count()) + " tissue pixels");
      ImageStats stats;
      stats.id = path.stem().string();
      stats.reinhard = fit_reinhard_stats(image, &mask);
      stats.stain = fit_stain_model(image, lambda, iters, seed, od_threshold);
      slots[i].stats = std::move(stats);
    } catch (const Error& e) {
      slots[i].skipped = SkippedImage{path.string(), e.what()};
    }
  });

  CorpusStats corpus;
  for (auto& slot : slots) {
    if (slot.stats) corpus.per_image.push_back(std::move(*slot.stats));
    if (slot.skipped) corpus.skipped.push_back(std::move(*slot.skipped));
  }
  if (corpus.per_image.empty())
    raise(Errc::NoUsableImages,
          "all " + std::to_string(image_paths.size()) + " images were skipped");

  std::sort(corpus.per_image.begin(), corpus.per_image.end(),
            [](const ImageStats& a, const ImageStats& b) { return a.id < b.id; });
  std::sort(corpus.skipped.begin(), corpus.skipped.end(),
            [](const SkippedImage& a, const SkippedImage& b) { return a.path < b.path; });

  corpus.ranges = ranges_from_stats(corpus.per_image);

  std::ostringstream origin;
  origin << "stainkit " << kToolVersion << " lambda=" << lambda << " iters=" << iters
         << " seed=" << seed << " od_threshold=" << od_threshold;
  corpus.fitted_at = origin.str();
  return corpus;
}

ParameterRanges enlarge_ranges(const ParameterRanges& ranges, double factor) {
  if (!(factor >= 0.0)) raise(Errc::InvalidArgument, "factor must be >= 0");
  if (factor == 1.0) return ranges;  // exact identity, no midpoint rounding

  ParameterRanges out = ranges;
  for (std::size_t f = 0; f < 4; ++f) {
    const RangeField& field = kRangeFields[f];
    Interval* iv = intervals_of(out, f);
    for (std::size_t i = 0; i < field.count; ++i) {
      const double center = 0.5 * (iv[i].lo + iv[i].hi);
      const double half_width = 0.5 * (iv[i].hi - iv[i].lo);
      double lo = center - factor * half_width;
      double hi = center + factor * half_width;
      if (field.domain_floor != kNoFloor) lo = std::max(lo, field.domain_floor);
      iv[i] = {lo, std::max(lo, hi)};
    }
  }
  return out;
}

namespace {

nlohmann::json intervals_to_json(const Interval* iv, std::size_t count) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < count; ++i) arr.push_back({iv[i].lo, iv[i].hi});
  return arr;
}

void intervals_from_json(const nlohmann::json& j, const std::string& where, Interval* iv,
                         std::size_t count) {
  if (!j.is_array() || j.size() != count)
    raise(Errc::SchemaError, where + ": expected an array of " + std::to_string(count) +
                                 " [lo,hi] pairs");
  for (std::size_t i = 0; i < count; ++i) {
    const auto& pair = j[i];
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() || !pair[1].is_number())
      raise(Errc::SchemaError, where + "[" + std::to_string(i) + "]: expected [lo,hi]");
    iv[i] = {pair[0].get<double>(), pair[1].get<double>()};
  }
}

template <typename T>
T require(const nlohmann::json& j, const std::string& where, const char* key) {
  if (!j.contains(key)) raise(Errc::SchemaError, where + "." + key + ": missing field");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::SchemaError, where + "." + std::string(key) + ": " + e.what());
  }
}

}  // namespace

void to_json(nlohmann::json& j, const CorpusStats& stats) {
  nlohmann::json per_image = nlohmann::json::array();
  for (const ImageStats& s : stats.per_image)
    per_image.push_back({{"id", s.id}, {"reinhard", s.reinhard}, {"stain", s.stain}});

  nlohmann::json skipped = nlohmann::json::array();
  for (const SkippedImage& s : stats.skipped)
    skipped.push_back({{"path", s.path}, {"reason", s.reason}});

  j = nlohmann::json{
      {"version", kSchemaVersion},
      {"fitted_at", stats.fitted_at},
      {"per_image", per_image},
      {"ranges",
       {{"reinhard_mean", intervals_to_json(stats.ranges.reinhard_mean.data(), 3)},
        {"reinhard_std", intervals_to_json(stats.ranges.reinhard_std.data(), 3)},
        {"stain_entries", intervals_to_json(stats.ranges.stain_entries.data(), 6)},
        {"conc_scale", intervals_to_json(stats.ranges.conc_scale.data(), 2)}}},
      {"skipped", skipped},
  };
}

void from_json(const nlohmann::json& j, CorpusStats& stats) {
  const int version = require<int>(j, "stats", "version");
  if (version != kSchemaVersion)
    raise(Errc::SchemaError,
          "stats.version: unsupported schema version " + std::to_string(version));
  stats.fitted_at = require<std::string>(j, "stats", "fitted_at");

  if (!j.contains("per_image") || !j.at("per_image").is_array())
    raise(Errc::SchemaError, "stats.per_image: missing or not an array");
  stats.per_image.clear();
  std::size_t idx = 0;
  for (const auto& entry : j.at("per_image")) {
    const std::string where = "stats.per_image[" + std::to_string(idx++) + "]";
    ImageStats s;
    s.id = require<std::string>(entry, where, "id");
    s.reinhard = require<ReinhardStats>(entry, where, "reinhard");
    s.stain = require<StainModel>(entry, where, "stain");
    try {
      s.reinhard.validate();
      s.stain.validate();
    } catch (const Error& e) {
      raise(Errc::SchemaError, where + ": " + e.what());
    }
    stats.per_image.push_back(std::move(s));
  }
  if (stats.per_image.empty()) raise(Errc::SchemaError, "stats.per_image: must be non-empty");

  if (!j.contains("ranges")) raise(Errc::SchemaError, "stats.ranges: missing field");
  const auto& ranges = j.at("ranges");
  const auto field = [&](const char* key) -> const nlohmann::json& {
    if (!ranges.contains(key))
      raise(Errc::SchemaError, "stats.ranges." + std::string(key) + ": missing field");
    return ranges.at(key);
  };
  intervals_from_json(field("reinhard_mean"), "ranges.reinhard_mean",
                      stats.ranges.reinhard_mean.data(), 3);
  intervals_from_json(field("reinhard_std"), "ranges.reinhard_std",
                      stats.ranges.reinhard_std.data(), 3);
  intervals_from_json(field("stain_entries"), "ranges.stain_entries",
                      stats.ranges.stain_entries.data(), 6);
  intervals_from_json(field("conc_scale"), "ranges.conc_scale",
                      stats.ranges.conc_scale.data(), 2);
  stats.ranges.validate();

  stats.skipped.clear();
  if (j.contains("skipped")) {
    idx = 0;
    for (const auto& entry : j.at("skipped")) {
      const std::string where = "stats.skipped[" + std::to_string(idx++) + "]";
      stats.skipped.push_back(SkippedImage{require<std::string>(entry, where, "path"),
                                           require<std::string>(entry, where, "reason")});
    }
  }
}

void save_corpus_stats(const CorpusStats& stats, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) raise(Errc::IoError, "cannot open " + path.string() + " for writing");
  const nlohmann::json j = stats;
  out << j.dump(2) << '\n';
  if (!out) raise(Errc::IoError, "failed to write " + path.string());
}

CorpusStats load_corpus_stats(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::FileNotFound, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::SchemaError, path.string() + ": " + e.what());
  }
  return j.get<CorpusStats>();
}

}  // namespace stainkit
