#include "stainkit/augment.hpp"

#include <cmath>
#include <fstream>

#include "stainkit/error.hpp"
#include "stainkit/parallel.hpp"
#include "stainkit/rng.hpp"

namespace stainkit {

namespace {

constexpr std::uint64_t kSaltParams = 2;
constexpr std::uint64_t kSaltSourceFit = 3;
constexpr int kMaxStainResamples = 16;
constexpr double kColumnNormFloor = 1e-8;

}  // namespace

const char* method_name(Method m) {
  return m == Method::Reinhard ? "reinhard" : "vahadane";
}

const char* geom_name(GeomTransform g) {
  switch (g) {
    case GeomTransform::None: return "none";
    case GeomTransform::HFlip: return "hflip";
    case GeomTransform::VFlip: return "vflip";
    case GeomTransform::Rot90: return "rot90";
    case GeomTransform::Rot180: return "rot180";
    case GeomTransform::Rot270: return "rot270";
  }
  return "none";
}

void AugmentConfig::validate() const {
  if (!(p_reinhard >= 0.0 && p_reinhard <= 1.0))
    raise(Errc::InvalidArgument, "p_reinhard must be in [0,1]");
  if (!(enlarge_factor >= 0.0)) raise(Errc::InvalidArgument, "enlarge_factor must be >= 0");
  if (lambda < 0.0) raise(Errc::InvalidArgument, "lambda must be >= 0");
  if (iters < 1) raise(Errc::InvalidArgument, "iters must be >= 1");
}

nlohmann::json params_to_json(const TargetParams& params) {
  nlohmann::json j{{"method", method_name(params.method)}, {"geom", geom_name(params.geom)}};
  if (params.reinhard_target) j["reinhard_target"] = *params.reinhard_target;
  if (params.stain_target) j["stain_target"] = *params.stain_target;
  return j;
}

TargetParams sample_target_params(const ParameterRanges& ranges, const AugmentConfig& config,
                                  std::uint64_t image_index) {
  config.validate();
  ranges.validate();
  const ParameterRanges enlarged = enlarge_ranges(ranges, config.enlarge_factor);

  SplitMix64 rng(derive_stream_seed(config.seed, image_index, kSaltParams));
  TargetParams params;
  params.method = rng.next_double() < config.p_reinhard ? Method::Reinhard : Method::Vahadane;

  if (params.method == Method::Reinhard) {
    ReinhardStats stats;
    for (int c = 0; c < 3; ++c)
      stats.mean[c] = rng.uniform(enlarged.reinhard_mean[c].lo, enlarged.reinhard_mean[c].hi);
    for (int c = 0; c < 3; ++c)
      stats.std[c] = rng.uniform(enlarged.reinhard_std[c].lo, enlarged.reinhard_std[c].hi);
    params.reinhard_target = stats;
  } else {
    // Entries are drawn independently and the columns renormalized; a column
    // whose pre-normalization norm is below the floor is resampled.
    StainModel model;
    bool accepted = false;
    for (int attempt = 0; attempt < kMaxStainResamples && !accepted; ++attempt) {
      double entries[6];
      for (int i = 0; i < 6; ++i)
        entries[i] = rng.uniform(enlarged.stain_entries[i].lo, enlarged.stain_entries[i].hi);
      double norm[2] = {0.0, 0.0};
      for (int col = 0; col < 2; ++col)
        norm[col] = std::sqrt(entries[col] * entries[col] + entries[2 + col] * entries[2 + col] +
                              entries[4 + col] * entries[4 + col]);
      if (norm[0] < kColumnNormFloor || norm[1] < kColumnNormFloor) continue;
      for (int r = 0; r < 3; ++r)
        for (int col = 0; col < 2; ++col)
          model.stains.w[r][col] = entries[2 * r + col] / norm[col];
      accepted = true;
    }
    if (!accepted)
      raise(Errc::DegenerateSample,
            "sampled stain column norm stayed below 1e-8 after " +
                std::to_string(kMaxStainResamples) + " attempts");

    model.scale = {rng.uniform(enlarged.conc_scale[0].lo, enlarged.conc_scale[0].hi),
                   rng.uniform(enlarged.conc_scale[1].lo, enlarged.conc_scale[1].hi)};

    // Restore the hematoxylin-first column order; the scales travel with
    // their columns.
    auto& w = model.stains.w;
    if (w[2][0] < w[2][1] || (w[2][0] == w[2][1] && w[0][0] > w[0][1])) {
      for (int r = 0; r < 3; ++r) std::swap(w[r][0], w[r][1]);
      std::swap(model.scale[0], model.scale[1]);
    }
    params.stain_target = model;
  }

  if (config.geometric) {
    static constexpr GeomTransform kGeoms[6] = {GeomTransform::None,   GeomTransform::HFlip,
                                                GeomTransform::VFlip,  GeomTransform::Rot90,
                                                GeomTransform::Rot180, GeomTransform::Rot270};
    params.geom = kGeoms[rng.next_below(6)];
  }
  return params;
}

RgbImage geometric_augment(const RgbImage& image, GeomTransform geom) {
  const int w = image.width();
  const int h = image.height();
  switch (geom) {
    case GeomTransform::None:
      return image;
    case GeomTransform::HFlip: {
      RgbImage out = image;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(x, y) = image.at(w - 1 - x, y);
      return out;
    }
    case GeomTransform::VFlip: {
      RgbImage out = image;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(x, y) = image.at(x, h - 1 - y);
      return out;
    }
    case GeomTransform::Rot90: {  // clockwise; output is h x w
      RgbImage out = RgbImage::filled(h, w, Rgb8{});
      for (int y = 0; y < w; ++y)
        for (int x = 0; x < h; ++x) out.at(x, y) = image.at(y, h - 1 - x);
      return out;
    }
    case GeomTransform::Rot180: {
      RgbImage out = image;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(x, y) = image.at(w - 1 - x, h - 1 - y);
      return out;
    }
    case GeomTransform::Rot270: {  // counterclockwise; output is h x w
      RgbImage out = RgbImage::filled(h, w, Rgb8{});
      for (int y = 0; y < w; ++y)
        for (int x = 0; x < h; ++x) out.at(x, y) = image.at(w - 1 - y, x);
      return out;
    }
  }
  return image;
}

RgbImage apply_stain_augmentation(const RgbImage& image, const TargetParams& params,
                                  const AugmentConfig& config) {
  config.validate();
  RgbImage colored = [&] {
    if (params.method == Method::Reinhard) {
      if (!params.reinhard_target)
        raise(Errc::InvalidArgument, "Reinhard params carry no reinhard_target");
      // Source statistics come from tissue pixels, matching how corpus
      // ranges were fitted; blank tiles fall back to whole-image statistics.
      const TissueMask mask = tissue_mask(image);
      return reinhard_transfer(image, *params.reinhard_target,
                               mask.tissue_count() > 0 ? &mask : nullptr);
    }
    if (!params.stain_target)
      raise(Errc::InvalidArgument, "Vahadane params carry no stain_target");
    return vahadane_normalize(image, *params.stain_target, config.lambda, config.iters,
                              config.seed);
  }();
  return geometric_augment(colored, params.geom);
}

AugmentManifest augment_batch(const std::vector<std::filesystem::path>& inputs,
                              const CorpusStats& stats, const AugmentConfig& config,
                              const std::filesystem::path& out_dir, int copies_per_image,
                              int threads) {
  config.validate();
  if (copies_per_image < 1) raise(Errc::InvalidArgument, "copies_per_image must be >= 1");
  if (!std::filesystem::is_directory(out_dir))
    raise(Errc::IoError, "output directory does not exist: " + out_dir.string());

  const std::size_t n_items = inputs.size() * static_cast<std::size_t>(copies_per_image);
  AugmentManifest manifest;
  manifest.entries.resize(n_items);

  // Stage 1: draw all target params. Keyed only by (seed, image_index), so
  // this stage needs no image data.
  std::vector<bool> wants_vahadane(inputs.size(), false);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (int c = 0; c < copies_per_image; ++c) {
      const std::size_t item = i * copies_per_image + static_cast<std::size_t>(c);
      ManifestEntry& entry = manifest.entries[item];
      entry.input = inputs[i].string();
      try {
        entry.params = sample_target_params(stats.ranges, config, item);
        if (entry.params.method == Method::Vahadane) wants_vahadane[i] = true;
      } catch (const Error& e) {
        entry.error = e.what();
      }
    }
  }

  // Stage 2: load each input once and fit its source stain model if any of
  // its copies drew the Vahadane path. The fit seed depends on the input
  // position, not on scheduling.
  struct SourceData {
    std::optional<RgbImage> image;
    std::optional<StainModel> source_model;
    std::string error;
  };
  std::vector<SourceData> sources(inputs.size());
  parallel_for(inputs.size(), threads, [&](std::size_t i) {
    try {
      sources[i].image = load_image(inputs[i]);
      if (wants_vahadane[i])
        sources[i].source_model =
            fit_stain_model(*sources[i].image, config.lambda, config.iters,
                            derive_stream_seed(config.seed, i, kSaltSourceFit));
    } catch (const Error& e) {
      sources[i].error = e.what();
    }
  });

  // Stage 3: produce outputs. Items are independent; the manifest order is
  // fixed by index, so results do not depend on thread count.
  parallel_for(n_items, threads, [&](std::size_t item) {
    ManifestEntry& entry = manifest.entries[item];
    if (!entry.error.empty()) return;
    const std::size_t i = item / static_cast<std::size_t>(copies_per_image);
    const int c = static_cast<int>(item % static_cast<std::size_t>(copies_per_image));

    const SourceData& src = sources[i];
    if (!src.error.empty()) {
      entry.error = src.error;
      return;
    }
    try {
      const RgbImage& image = *src.image;
      RgbImage colored = [&] {
        if (entry.params.method == Method::Reinhard) {
          const TissueMask mask = tissue_mask(image);
          return reinhard_transfer(image, *entry.params.reinhard_target,
                                   mask.tissue_count() > 0 ? &mask : nullptr);
        }
        if (!src.source_model) raise(Errc::InsufficientTissue, "no source stain model");
        return vahadane_normalize_with_source(image, *src.source_model,
                                              *entry.params.stain_target, config.lambda);
      }();
      const RgbImage out = geometric_augment(colored, entry.params.geom);

      const std::filesystem::path out_path =
          out_dir / (inputs[i].stem().string() + "_aug" + std::to_string(c) + ".png");
      save_image(out, out_path);
      entry.output = out_path.string();
    } catch (const Error& e) {
      entry.error = e.what();
    }
  });

  return manifest;
}

namespace {

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    out += ch;
    if (ch == '"') out += '"';
  }
  out += '"';
  return out;
}

}  // namespace

void write_manifest_csv(const AugmentManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) raise(Errc::IoError, "cannot open " + path.string() + " for writing");
  out << "input,output,method,geom,params_json\n";
  for (const ManifestEntry& entry : manifest.entries) {
    nlohmann::json params = params_to_json(entry.params);
    if (!entry.error.empty()) params["error"] = entry.error;
    out << entry.input << ',' << entry.output << ',' << method_name(entry.params.method) << ','
        << geom_name(entry.params.geom) << ',' << csv_quote(params.dump()) << '\n';
  }
  if (!out) raise(Errc::IoError, "failed to write " + path.string());
}

}  // namespace stainkit
