// stainkit CLI: fit-stats, normalize, augment, eval.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stainkit/augment.hpp"
#include "stainkit/corpus.hpp"
#include "stainkit/error.hpp"
#include "stainkit/metrics.hpp"
#include "stainkit/parallel.hpp"
#include "stainkit/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct Defaults {
  double lambda = stainkit::kDefaultLambda;
  int iters = stainkit::kDefaultIters;
  std::uint64_t seed = 0;
  double p_reinhard = 0.5;
  double enlarge_factor = 1.0;
  double radius = stainkit::kDefaultMatchRadius;
  double od_eps = stainkit::kDefaultOdEps;
  double od_threshold = stainkit::kDefaultOdThreshold;
};

// Strict config parsing: unknown keys are rejected by name.
Defaults load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("--config", "cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CLI::ValidationError("--config", path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw CLI::ValidationError("--config", "config must be a JSON object");

  Defaults d;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "lambda") d.lambda = value.get<double>();
      else if (key == "iters") d.iters = value.get<int>();
      else if (key == "seed") d.seed = value.get<std::uint64_t>();
      else if (key == "p_reinhard") d.p_reinhard = value.get<double>();
      else if (key == "enlarge_factor") d.enlarge_factor = value.get<double>();
      else if (key == "radius") d.radius = value.get<double>();
      else if (key == "od_eps") d.od_eps = value.get<double>();
      else if (key == "od_threshold") d.od_threshold = value.get<double>();
      else throw CLI::ValidationError("--config", "unknown config key '" + key + "'");
    } catch (const json::exception& e) {
      throw CLI::ValidationError("--config", "config key '" + key + "': " + e.what());
    }
  }
  return d;
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir))
    stainkit::raise(stainkit::Errc::FileNotFound, dir.string() + " is not a directory");
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png" || ext == ".tif" || ext == ".tiff") paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty())
    stainkit::raise(stainkit::Errc::NoUsableImages, "no PNG/TIFF images in " + dir.string());
  return paths;
}

void emit(const json& j, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(out_path);
  if (!out) stainkit::raise(stainkit::Errc::IoError, "cannot open " + out_path + " for writing");
  out << j.dump(2) << '\n';
  if (!out) stainkit::raise(stainkit::Errc::IoError, "failed to write " + out_path);
}

const stainkit::ImageStats& find_image_stats(const stainkit::CorpusStats& stats,
                                             const std::string& id) {
  for (const auto& entry : stats.per_image)
    if (entry.id == id) return entry;
  stainkit::raise(stainkit::Errc::InvalidArgument,
                  "image id '" + id + "' not found in stats file");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stain-color domain augmentation and evaluation toolkit for histopathology tiles"};
  app.require_subcommand(1);

  std::string config_path;
  int threads = stainkit::default_thread_count();
  app.add_option("--config", config_path, "JSON config file with option defaults");
  app.add_option("--threads", threads, "worker threads (default: all cores)");
  app.set_version_flag("--version", std::string("stainkit ") + stainkit::kToolVersion +
                                        " (schema " +
                                        std::to_string(stainkit::kSchemaVersion) + ")");

  // fit-stats
  auto* fit = app.add_subcommand("fit-stats", "Fit per-image stats and ranges over a corpus");
  std::string fit_input_dir, fit_out;
  double fit_lambda = 0;
  int fit_iters = 0;
  std::uint64_t fit_seed = 0;
  fit->add_option("--input-dir", fit_input_dir, "directory of PNG/TIFF tiles")->required();
  fit->add_option("--out", fit_out, "output stats JSON path")->required();
  auto* fit_lambda_opt = fit->add_option("--lambda", fit_lambda, "sparsity weight");
  auto* fit_iters_opt = fit->add_option("--iters", fit_iters, "SNMF iterations");
  auto* fit_seed_opt = fit->add_option("--seed", fit_seed, "RNG seed");

  // normalize
  auto* norm = app.add_subcommand("normalize", "Normalize one image to a target style");
  std::string norm_method, norm_input, norm_target, norm_output;
  double norm_lambda = 0;
  int norm_iters = 0;
  std::uint64_t norm_seed = 0;
  norm->add_option("--method", norm_method, "reinhard or vahadane")
      ->required()
      ->check(CLI::IsMember({"reinhard", "vahadane"}));
  norm->add_option("--input", norm_input, "image to normalize")->required();
  norm->add_option("--target", norm_target, "stats.json#image-id or a target image path")
      ->required();
  norm->add_option("--output", norm_output, "output PNG path")->required();
  auto* norm_lambda_opt = norm->add_option("--lambda", norm_lambda, "sparsity weight");
  auto* norm_iters_opt = norm->add_option("--iters", norm_iters, "SNMF iterations");
  auto* norm_seed_opt = norm->add_option("--seed", norm_seed, "RNG seed");

  // augment
  auto* aug = app.add_subcommand("augment", "Generate randomized stain-augmented copies");
  std::string aug_stats, aug_input_dir, aug_out_dir;
  int aug_copies = 1;
  std::uint64_t aug_seed = 0;
  double aug_p_reinhard = 0, aug_enlarge = 0, aug_lambda = 0;
  int aug_iters = 0;
  bool aug_no_geometric = false;
  aug->add_option("--stats", aug_stats, "fitted stats JSON")->required();
  aug->add_option("--input-dir", aug_input_dir, "directory of input tiles")->required();
  aug->add_option("--out-dir", aug_out_dir, "existing output directory")->required();
  aug->add_option("--copies", aug_copies, "copies per input image");
  auto* aug_seed_opt = aug->add_option("--seed", aug_seed, "RNG seed");
  auto* aug_p_opt = aug->add_option("--p-reinhard", aug_p_reinhard, "probability of Reinhard");
  auto* aug_enlarge_opt = aug->add_option("--enlarge", aug_enlarge, "range enlargement factor");
  auto* aug_lambda_opt = aug->add_option("--lambda", aug_lambda, "sparsity weight");
  auto* aug_iters_opt = aug->add_option("--iters", aug_iters, "SNMF iterations");
  aug->add_flag("--no-geometric", aug_no_geometric, "disable flips/rotations");

  // eval
  auto* ev = app.add_subcommand("eval", "Score point detections against ground truth");
  std::string ev_gt, ev_pred, ev_out;
  double ev_radius = 0;
  bool ev_per_image = false;
  ev->add_option("--gt", ev_gt, "ground-truth CSV")->required();
  ev->add_option("--pred", ev_pred, "prediction CSV")->required();
  auto* ev_radius_opt = ev->add_option("--radius", ev_radius, "match radius in pixels");
  ev->add_flag("--per-image", ev_per_image, "include per-image breakdown");
  ev->add_option("--out", ev_out, "write the JSON report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // help goes to stdout, exit 0
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n";
    CLI::App* failed = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << failed->help() << std::flush;
    return kExitUsage;
  }

  try {
    Defaults defaults;
    if (!config_path.empty()) {
      try {
        defaults = load_config(config_path);
      } catch (const CLI::Error& e) {
        std::cerr << e.what() << '\n';
        return kExitUsage;
      }
    }
    if (threads < 1) threads = 1;

    if (*fit) {
      const double lambda = fit_lambda_opt->count() ? fit_lambda : defaults.lambda;
      const int iters = fit_iters_opt->count() ? fit_iters : defaults.iters;
      const std::uint64_t seed = fit_seed_opt->count() ? fit_seed : defaults.seed;

      const auto paths = list_images(fit_input_dir);
      const auto stats = stainkit::fit_corpus_stats(paths, lambda, iters, seed, threads,
                                                    defaults.od_threshold);
      for (const auto& skip : stats.skipped)
        std::cerr << "skipped " << skip.path << ": " << skip.reason << '\n';
      stainkit::save_corpus_stats(stats, fit_out);
      std::cerr << "fitted " << stats.per_image.size() << " images ("
                << stats.skipped.size() << " skipped) -> " << fit_out << '\n';
      return kExitOk;
    }

    if (*norm) {
      const double lambda = norm_lambda_opt->count() ? norm_lambda : defaults.lambda;
      const int iters = norm_iters_opt->count() ? norm_iters : defaults.iters;
      const std::uint64_t seed = norm_seed_opt->count() ? norm_seed : defaults.seed;

      const stainkit::RgbImage input = stainkit::load_image(norm_input);

      // Target is either "<stats.json>#<image-id>" or a raw image fitted on
      // the fly.
      std::optional<stainkit::ReinhardStats> reinhard_target;
      std::optional<stainkit::StainModel> stain_target;
      const auto hash_pos = norm_target.rfind('#');
      if (hash_pos != std::string::npos &&
          norm_target.substr(0, hash_pos).ends_with(".json")) {
        const auto stats = stainkit::load_corpus_stats(norm_target.substr(0, hash_pos));
        const auto& entry = find_image_stats(stats, norm_target.substr(hash_pos + 1));
        reinhard_target = entry.reinhard;
        stain_target = entry.stain;
      } else {
        const stainkit::RgbImage target_image = stainkit::load_image(norm_target);
        if (norm_method == "reinhard") {
          const auto mask = stainkit::tissue_mask(target_image, defaults.od_threshold);
          reinhard_target = stainkit::fit_reinhard_stats(
              target_image, mask.tissue_count() > 0 ? &mask : nullptr);
        } else {
          stain_target = stainkit::fit_stain_model(target_image, lambda, iters, seed,
                                                   defaults.od_threshold);
        }
      }

      stainkit::RgbImage output = [&] {
        if (norm_method == "reinhard") {
          const auto mask = stainkit::tissue_mask(input, defaults.od_threshold);
          return stainkit::reinhard_transfer(input, *reinhard_target,
                                             mask.tissue_count() > 0 ? &mask : nullptr);
        }
        return stainkit::vahadane_normalize(input, *stain_target, lambda, iters, seed,
                                            defaults.od_threshold);
      }();
      stainkit::save_image(output, norm_output);
      return kExitOk;
    }

    if (*aug) {
      stainkit::AugmentConfig config;
      config.seed = aug_seed_opt->count() ? aug_seed : defaults.seed;
      config.p_reinhard = aug_p_opt->count() ? aug_p_reinhard : defaults.p_reinhard;
      config.enlarge_factor = aug_enlarge_opt->count() ? aug_enlarge : defaults.enlarge_factor;
      config.lambda = aug_lambda_opt->count() ? aug_lambda : defaults.lambda;
      config.iters = aug_iters_opt->count() ? aug_iters : defaults.iters;
      config.geometric = !aug_no_geometric;

      const auto stats = stainkit::load_corpus_stats(aug_stats);
      const auto paths = list_images(aug_input_dir);
      const auto manifest = stainkit::augment_batch(paths, stats, config, aug_out_dir,
                                                    aug_copies, threads);
      stainkit::write_manifest_csv(manifest, fs::path(aug_out_dir) / "manifest.csv");

      std::size_t written = 0, failed = 0;
      for (const auto& entry : manifest.entries) {
        if (entry.error.empty()) ++written;
        else ++failed;
      }
      for (const auto& entry : manifest.entries)
        if (!entry.error.empty())
          std::cerr << "failed " << entry.input << ": " << entry.error << '\n';
      emit(json{{"written", written}, {"failed", failed}}, "");
      return kExitOk;
    }

    if (*ev) {
      const double radius = ev_radius_opt->count() ? ev_radius : defaults.radius;
      const auto gt = stainkit::load_annotations(ev_gt, stainkit::AnnotationKind::GroundTruth);
      const auto pred =
          stainkit::load_annotations(ev_pred, stainkit::AnnotationKind::Prediction);

      json report = stainkit::evaluate(gt, pred, radius);
      if (ev_per_image) {
        json per_image = json::object();
        for (const auto& [id, result] : stainkit::evaluate_per_image(gt, pred, radius))
          per_image[id] = result;
        report["per_image"] = per_image;
      }
      emit(report, ev_out);
      return kExitOk;
    }

    return kExitUsage;  // unreachable with require_subcommand(1)
  } catch (const stainkit::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
}
