#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace stainkit {

struct Detection {
  std::string image_id;
  double x = 0.0;
  double y = 0.0;
  double score = 1.0;  // ground truth carries 1.0
};

struct DetectionSet {
  std::vector<Detection> entries;
};

struct EvalResult {
  long long tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

void to_json(nlohmann::json& j, const EvalResult& r);

struct MatchResult {
  long long tp = 0, fp = 0, fn = 0;
  /// (index into pred.entries, index into gt.entries) per matched pair.
  std::vector<std::pair<std::size_t, std::size_t>> matches;
};

inline constexpr double kDefaultMatchRadius = 30.0;

/// Challenge-style greedy point matching, never across image ids.
/// Predictions are processed in descending score order (ties: ascending x
/// then y); each matches its nearest unmatched ground-truth point within
/// radius (distance ties: ascending gt x then y). Matched pairs are TP,
/// unmatched predictions FP, unmatched ground truth FN.
MatchResult match_detections(const DetectionSet& gt, const DetectionSet& pred, double radius);

/// Derived metrics with the zero-denominator convention (0, not NaN).
EvalResult eval_from_counts(long long tp, long long fp, long long fn);

EvalResult evaluate(const DetectionSet& gt, const DetectionSet& pred,
                    double radius = kDefaultMatchRadius);

/// Per-image breakdown keyed by image id (union of ids in gt and pred).
std::map<std::string, EvalResult> evaluate_per_image(const DetectionSet& gt,
                                                     const DetectionSet& pred,
                                                     double radius = kDefaultMatchRadius);

enum class AnnotationKind { GroundTruth, Prediction };

/// CSV with header image,x,y[,score]. Ground truth ignores any score column
/// and stores 1.0; predictions require one. Throws ParseError with the line
/// number, or MissingColumn.
DetectionSet load_annotations(const std::filesystem::path& path, AnnotationKind kind);

}  // namespace stainkit
