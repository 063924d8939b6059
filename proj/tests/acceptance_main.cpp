// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line per criterion. Exits with the number of failures.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "stainkit/augment.hpp"
#include "stainkit/corpus.hpp"
#include "stainkit/metrics.hpp"
#include "stainkit/reinhard.hpp"
#include "stainkit/rng.hpp"
#include "stainkit/vahadane.hpp"
#include "test_helpers.hpp"

namespace fs = std::filesystem;
using namespace stainkit;

namespace {

std::string g_cli_path;

void check(bool condition, const std::string& message) {
  if (!condition) throw std::runtime_error(message);
}

void check_close(double got, double want, double tol, const std::string& what) {
  if (std::abs(got - want) > tol) {
    std::ostringstream os;
    os << what << ": got " << got << ", want " << want << " +/- " << tol;
    throw std::runtime_error(os.str());
  }
}

// ---- criterion 1: metric reproduction ----

void criterion_metrics() {
  const EvalResult direct = eval_from_counts(60, 17, 23);
  check_close(direct.precision, 0.7792, 5e-5, "precision from counts");
  check_close(direct.recall, 0.7229, 5e-5, "recall from counts");
  check_close(direct.f1, 0.7500, 5e-5, "f1 from counts");

  // Same counts through the full matching path.
  DetectionSet gt, pred;
  for (int i = 0; i < 60; ++i) {
    gt.entries.push_back({"t", 0.0, i * 100.0, 1.0});
    pred.entries.push_back({"t", 3.0, i * 100.0, 0.9});
  }
  for (int i = 0; i < 17; ++i) pred.entries.push_back({"t", 5000.0, i * 100.0, 0.8});
  for (int i = 0; i < 23; ++i) gt.entries.push_back({"t", 9000.0, i * 100.0, 1.0});
  const EvalResult full = evaluate(gt, pred, 30.0);
  check(full.tp == 60 && full.fp == 17 && full.fn == 23, "matching path counts");
  check_close(full.f1, 0.7500, 5e-5, "f1 via matching");
}

// ---- criterion 2: Reinhard identity and targeting ----

void criterion_reinhard() {
  for (int trial = 0; trial < 10; ++trial) {
    const RgbImage img = testutil::make_random_image(256, 256, 9000 + trial);
    const ReinhardStats source = fit_reinhard_stats(img);
    for (int c = 0; c < 3; ++c)
      check(source.std[c] >= 0.01, "tile not degenerate");

    const RgbImage self = reinhard_transfer(img, source);
    for (std::size_t i = 0; i < img.pixels().size(); ++i) {
      const Rgb8 a = img.pixels()[i];
      const Rgb8 b = self.pixels()[i];
      check(std::abs(int(a.r) - int(b.r)) <= 1 && std::abs(int(a.g) - int(b.g)) <= 1 &&
                std::abs(int(a.b) - int(b.b)) <= 1,
            "self-transfer deviates more than 1");
    }

    const ReinhardStats target =
        fit_reinhard_stats(testutil::make_random_image(256, 256, 9100 + trial));
    const ReinhardStats result = fit_reinhard_stats(reinhard_transfer(img, target));
    for (int c = 0; c < 3; ++c) {
      check_close(result.mean[c], target.mean[c], 0.02, "post-transfer mean");
      check_close(result.std[c], target.std[c], 0.02, "post-transfer std");
    }
  }
}

// ---- criterion 3: SNMF recovery ----

Eigen::Matrix<double, 3, 2> perturbed_stains(std::uint64_t seed) {
  SplitMix64 rng(seed);
  Eigen::Matrix<double, 3, 2> w = testutil::canonical_stains();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c)
      w(r, c) = std::max(0.02, w(r, c) + rng.uniform(-0.06, 0.06));
  w.col(0).normalize();
  w.col(1).normalize();
  return w;
}

void criterion_snmf() {
  for (int trial = 0; trial < 20; ++trial) {
    const auto w_true = perturbed_stains(7000 + trial);
    const auto synth = testutil::make_two_stain_image(128, 128, 7100 + trial, w_true);
    const OdImage od = rgb_to_od(synth.image);
    const TissueMask mask = tissue_mask(synth.image);

    std::vector<double> trace;
    const StainMatrix got = estimate_stain_matrix(od, mask, 0.1, 50, 7, &trace);
    for (std::size_t i = 1; i < trace.size(); ++i)
      check(trace[i] <= trace[i - 1] + 1e-9, "objective increased at iteration " +
                                                 std::to_string(i) + " of trial " +
                                                 std::to_string(trial));

    const Eigen::Vector3d got0(got.w[0][0], got.w[1][0], got.w[2][0]);
    const Eigen::Vector3d got1(got.w[0][1], got.w[1][1], got.w[2][1]);
    const double direct = std::max(testutil::column_angle_deg(got0, w_true.col(0)),
                                   testutil::column_angle_deg(got1, w_true.col(1)));
    const double swapped = std::max(testutil::column_angle_deg(got0, w_true.col(1)),
                                    testutil::column_angle_deg(got1, w_true.col(0)));
    const double angle = std::min(direct, swapped);
    check(angle <= 3.0, "stain column angular error " + std::to_string(angle) +
                            " deg in trial " + std::to_string(trial));
  }
}

// ---- criterion 4: sparse-coding oracle ----

void criterion_sparse_coding() {
  const auto w = testutil::canonical_stains();
  StainMatrix stains;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) stains.w[r][c] = w(r, c);

  SplitMix64 rng(4040);
  int tested = 0;
  while (tested < 120) {
    const double lambda = tested % 4 == 0 ? 0.0 : rng.uniform(0.0, 0.8);
    const Eigen::Vector3d v(rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0),
                            rng.uniform(0.0, 2.0));
    const OdImage od(1, 1, {{{v[0], v[1], v[2]}}});
    const auto got = compute_concentrations(od, stains, lambda).h[0];
    const auto want = testutil::lasso_grid_search(v, w, lambda, 1e-3);
    check(std::abs(got[0] - want[0]) <= 2e-3 && std::abs(got[1] - want[1]) <= 2e-3,
          "coordinate descent disagrees with the grid search at pixel " +
              std::to_string(tested));
    ++tested;
  }
}

// ---- criterion 5: range mechanics ----

void criterion_ranges() {
  testutil::TempDir dir;
  Eigen::Matrix<double, 3, 2> w_b;
  w_b.col(0) = Eigen::Vector3d(0.55, 0.75, 0.35).normalized();
  w_b.col(1) = Eigen::Vector3d(0.15, 0.95, 0.05).normalized();
  save_image(testutil::make_two_stain_image(96, 96, 5001).image, dir / "a.png");
  save_image(testutil::make_two_stain_image(96, 96, 5002, w_b).image, dir / "b.png");

  const CorpusStats stats = fit_corpus_stats({dir / "a.png", dir / "b.png"}, 0.1, 30, 5);
  check(stats.per_image.size() == 2, "two images fitted");
  const auto va = parameter_vector(stats.per_image[0]);
  const auto vb = parameter_vector(stats.per_image[1]);

  std::vector<Interval> all;
  for (const auto& iv : stats.ranges.reinhard_mean) all.push_back(iv);
  for (const auto& iv : stats.ranges.reinhard_std) all.push_back(iv);
  for (const auto& iv : stats.ranges.stain_entries) all.push_back(iv);
  for (const auto& iv : stats.ranges.conc_scale) all.push_back(iv);
  for (std::size_t i = 0; i < all.size(); ++i) {
    check(all[i].lo == std::min(va[i], vb[i]) && all[i].hi == std::max(va[i], vb[i]),
          "ranges are not the elementwise min/max at index " + std::to_string(i));
  }

  check(enlarge_ranges(stats.ranges, 1.0) == stats.ranges, "factor 1 is not the identity");

  const double factors[] = {0.0, 0.5, 1.0, 2.0, 4.0};
  for (std::size_t a = 0; a + 1 < std::size(factors); ++a) {
    const auto inner = enlarge_ranges(stats.ranges, factors[a]);
    const auto outer = enlarge_ranges(stats.ranges, factors[a + 1]);
    const auto nested = [&](const Interval& in, const Interval& out, const char* name) {
      check(out.lo <= in.lo && in.hi <= out.hi,
            std::string("factor monotonicity broken for ") + name);
    };
    for (int k = 0; k < 3; ++k) nested(inner.reinhard_mean[k], outer.reinhard_mean[k], "mean");
    for (int k = 0; k < 3; ++k) nested(inner.reinhard_std[k], outer.reinhard_std[k], "std");
    for (int k = 0; k < 6; ++k) nested(inner.stain_entries[k], outer.stain_entries[k], "stain");
    for (int k = 0; k < 2; ++k) nested(inner.conc_scale[k], outer.conc_scale[k], "scale");
  }

  // clamping fixture: [0.02, 0.04] -> [0, 0.07]
  ParameterRanges fixture = stats.ranges;
  fixture.stain_entries[0] = {0.02, 0.04};
  const auto enlarged = enlarge_ranges(fixture, 4.0);
  check(enlarged.stain_entries[0].lo == 0.0, "stain lower bound not clamped at 0");
  check_close(enlarged.stain_entries[0].hi, 0.07, 1e-12, "stain upper bound");
}

// ---- criterion 6: augmentation determinism ----

int run_command(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void criterion_augment_determinism() {
  check(!g_cli_path.empty(), "CLI path not provided (argv[1])");

  testutil::TempDir input_dir, work;
  for (int i = 0; i < 10; ++i) {
    const auto w = perturbed_stains(6000 + i);
    save_image(testutil::make_two_stain_image(96, 96, 6100 + i, w).image,
               input_dir / ("tile" + std::to_string(i) + ".png"));
  }

  const std::string stats_path = (work / "stats.json").string();
  check(run_command(g_cli_path + " fit-stats --input-dir " + input_dir.path().string() +
                    " --out " + stats_path + " --iters 20 --seed 5 2> /dev/null") == 0,
        "fit-stats failed");

  std::vector<fs::path> out_dirs;
  for (int run = 0; run < 4; ++run) {
    const int threads = run < 2 ? 1 : 8;
    const fs::path out_dir = work / ("out" + std::to_string(run));
    fs::create_directories(out_dir);
    out_dirs.push_back(out_dir);
    const std::string cmd = g_cli_path + " --threads " + std::to_string(threads) +
                            " augment --stats " + stats_path + " --input-dir " +
                            input_dir.path().string() + " --out-dir " + out_dir.string() +
                            " --copies 3 --seed 7 --iters 20 > /dev/null 2> /dev/null";
    check(run_command(cmd) == 0, "augment run " + std::to_string(run) + " failed");
  }

  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(out_dirs[0]))
    names.push_back(entry.path().filename().string());
  check(names.size() == 31, "expected 30 outputs + manifest, got " +
                                std::to_string(names.size()));
  for (std::size_t run = 1; run < out_dirs.size(); ++run)
    for (const auto& name : names)
      check(testutil::read_file(out_dirs[0] / name) == testutil::read_file(out_dirs[run] / name),
            name + " differs between run 0 and run " + std::to_string(run));

  // empirical method split over 10,000 sampled params
  const CorpusStats stats = load_corpus_stats(stats_path);
  AugmentConfig config;
  config.seed = 7;
  const int n = 10000;
  int reinhard = 0;
  for (int i = 0; i < n; ++i)
    if (sample_target_params(stats.ranges, config, static_cast<std::uint64_t>(i)).method ==
        Method::Reinhard)
      ++reinhard;
  const double freq = static_cast<double>(reinhard) / n;
  const double se = std::sqrt(config.p_reinhard * (1.0 - config.p_reinhard) / n);
  check_close(freq, config.p_reinhard, 4.0 * se, "empirical Reinhard frequency");
}

// ---- criterion 7: matching properties ----

void criterion_matching() {
  SplitMix64 rng(777);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n_gt = static_cast<std::size_t>(rng.next_below(7));
    const auto n_pred = static_cast<std::size_t>(rng.next_below(7));
    DetectionSet gt, pred;
    std::vector<std::pair<double, double>> gt_pts, pred_pts;
    for (std::size_t i = 0; i < n_gt; ++i) {
      const double x = rng.uniform(0, 40), y = rng.uniform(0, 40);
      gt.entries.push_back({"i", x, y, 1.0});
      gt_pts.emplace_back(x, y);
    }
    for (std::size_t i = 0; i < n_pred; ++i) {
      const double x = rng.uniform(0, 40), y = rng.uniform(0, 40);
      pred.entries.push_back({"i", x, y, rng.next_double()});
      pred_pts.emplace_back(x, y);
    }
    const double radius = rng.uniform(2.0, 25.0);

    const MatchResult m = match_detections(gt, pred, radius);
    check(m.tp + m.fp == static_cast<long long>(n_pred), "tp+fp != |pred|");
    check(m.tp + m.fn == static_cast<long long>(n_gt), "tp+fn != |gt|");
    check(m.tp <= testutil::max_matching_bruteforce(gt_pts, pred_pts, radius),
          "greedy exceeded the maximum matching");
    check(match_detections(gt, pred, radius * 1.5).tp >= m.tp,
          "tp decreased when the radius grew");
  }
}

// ---- criterion 8: roundtrips ----

void criterion_roundtrips() {
  std::vector<Rgb8> pixels;
  for (int v = 0; v < 256; ++v)
    pixels.push_back(
        Rgb8{std::uint8_t(v), std::uint8_t(v), std::uint8_t(v)});
  SplitMix64 rng(808);
  for (int i = 0; i < 1000; ++i)
    pixels.push_back(Rgb8{std::uint8_t(rng.next_below(256)), std::uint8_t(rng.next_below(256)),
                          std::uint8_t(rng.next_below(256))});
  const RgbImage img(static_cast<int>(pixels.size()), 1, pixels);

  const RgbImage od_back = od_to_rgb(rgb_to_od(img));
  const RgbImage lab_back = lalphabeta_to_rgb(rgb_to_lalphabeta(img));
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const Rgb8 a = img.pixels()[i];
    for (const RgbImage* back : {&od_back, &lab_back}) {
      const Rgb8 b = back->pixels()[i];
      if (a.r >= 1) check(std::abs(int(a.r) - int(b.r)) <= 1, "r channel off by > 1");
      if (a.g >= 1) check(std::abs(int(a.g) - int(b.g)) <= 1, "g channel off by > 1");
      if (a.b >= 1) check(std::abs(int(a.b) - int(b.b)) <= 1, "b channel off by > 1");
    }
  }
}

struct Criterion {
  int number;
  const char* name;
  double budget_seconds;  // 0 = no stated budget
  std::function<void()> body;
};

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) g_cli_path = argv[1];

  const std::vector<Criterion> criteria = {
      {1, "metric reproduction (tp=60 fp=17 fn=23)", 1.0, criterion_metrics},
      {2, "Reinhard identity and targeting", 5.0, criterion_reinhard},
      {3, "SNMF stain recovery and objective descent", 60.0, criterion_snmf},
      {4, "sparse-coding matches brute-force grid", 30.0, criterion_sparse_coding},
      {5, "range mechanics", 0.0, criterion_ranges},
      {6, "augmentation determinism", 0.0, criterion_augment_determinism},
      {7, "matching properties", 10.0, criterion_matching},
      {8, "OD and lab roundtrips", 0.0, criterion_roundtrips},
  };

  int failures = 0;
  for (const Criterion& criterion : criteria) {
    const auto start = std::chrono::steady_clock::now();
    std::string error;
    try {
      criterion.body();
    } catch (const std::exception& e) {
      error = e.what();
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (error.empty() && criterion.budget_seconds > 0.0 &&
        elapsed > criterion.budget_seconds) {
      std::ostringstream os;
      os << "runtime " << elapsed << "s exceeded the " << criterion.budget_seconds
         << "s budget";
      error = os.str();
    }

    std::ostringstream line;
    line << (error.empty() ? "PASS" : "FAIL") << "  criterion " << criterion.number << ": "
         << criterion.name << " (" << std::fixed << std::setprecision(2) << elapsed << "s)";
    if (!error.empty()) line << " -- " << error;
    std::cout << line.str() << std::endl;
    if (!error.empty()) ++failures;
  }
  return failures;
}
