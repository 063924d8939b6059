#include "stainkit/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>

#include "stainkit/error.hpp"

namespace stainkit {

void to_json(nlohmann::json& j, const EvalResult& r) {
  j = nlohmann::json{{"tp", r.tp},
                     {"fp", r.fp},
                     {"fn", r.fn},
                     {"precision", r.precision},
                     {"recall", r.recall},
                     {"f1", r.f1}};
}

MatchResult match_detections(const DetectionSet& gt, const DetectionSet& pred, double radius) {
  if (!(radius > 0.0)) raise(Errc::InvalidArgument, "radius must be > 0");

  // Group indices per image id; matching never crosses images.
  std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> by_image;
  for (std::size_t i = 0; i < gt.entries.size(); ++i)
    by_image[gt.entries[i].image_id].first.push_back(i);
  for (std::size_t i = 0; i < pred.entries.size(); ++i)
    by_image[pred.entries[i].image_id].second.push_back(i);

  MatchResult result;
  const double radius_sq = radius * radius;

  for (auto& [id, sets] : by_image) {
    auto& [gt_idx, pred_idx] = sets;

    // Descending score; ties by ascending x then y. Identical rows are
    // interchangeable, so row order cannot affect the outcome.
    std::sort(pred_idx.begin(), pred_idx.end(), [&](std::size_t a, std::size_t b) {
      const Detection& da = pred.entries[a];
      const Detection& db = pred.entries[b];
      if (da.score != db.score) return da.score > db.score;
      if (da.x != db.x) return da.x < db.x;
      return da.y < db.y;
    });

    std::vector<bool> taken(gt_idx.size(), false);
    for (std::size_t p : pred_idx) {
      const Detection& dp = pred.entries[p];
      std::size_t best = gt_idx.size();
      double best_dist = std::numeric_limits<double>::infinity();
      for (std::size_t g = 0; g < gt_idx.size(); ++g) {
        if (taken[g]) continue;
        const Detection& dg = gt.entries[gt_idx[g]];
        const double dx = dp.x - dg.x;
        const double dy = dp.y - dg.y;
        const double dist_sq = dx * dx + dy * dy;
        if (dist_sq > radius_sq) continue;
        // Nearest unmatched; distance ties go to the smaller (x, y).
        const bool better =
            best == gt_idx.size() || dist_sq < best_dist ||
            (dist_sq == best_dist &&
             (dg.x < gt.entries[gt_idx[best]].x ||
              (dg.x == gt.entries[gt_idx[best]].x && dg.y < gt.entries[gt_idx[best]].y)));
        if (better) {
          best = g;
          best_dist = dist_sq;
        }
      }
      if (best != gt_idx.size()) {
        taken[best] = true;
        result.matches.emplace_back(p, gt_idx[best]);
      }
    }
  }

  result.tp = static_cast<long long>(result.matches.size());
  result.fp = static_cast<long long>(pred.entries.size()) - result.tp;
  result.fn = static_cast<long long>(gt.entries.size()) - result.tp;
  return result;
}

EvalResult eval_from_counts(long long tp, long long fp, long long fn) {
  if (tp < 0 || fp < 0 || fn < 0) raise(Errc::InvalidArgument, "counts must be >= 0");
  EvalResult r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

EvalResult evaluate(const DetectionSet& gt, const DetectionSet& pred, double radius) {
  const MatchResult m = match_detections(gt, pred, radius);
  return eval_from_counts(m.tp, m.fp, m.fn);
}

std::map<std::string, EvalResult> evaluate_per_image(const DetectionSet& gt,
                                                     const DetectionSet& pred, double radius) {
  std::map<std::string, std::pair<DetectionSet, DetectionSet>> by_image;
  for (const Detection& d : gt.entries) by_image[d.image_id].first.entries.push_back(d);
  for (const Detection& d : pred.entries) by_image[d.image_id].second.entries.push_back(d);

  std::map<std::string, EvalResult> out;
  for (const auto& [id, sets] : by_image) out[id] = evaluate(sets.first, sets.second, radius);
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cell);
      cell.clear();
    } else {
      cell += ch;
    }
  }
  cells.push_back(cell);
  return cells;
}

double parse_double(const std::string& cell, std::size_t line_no, const char* what) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value))
    raise(Errc::ParseError,
          "line " + std::to_string(line_no) + ": bad " + what + " value '" + cell + "'");
  return value;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

DetectionSet load_annotations(const std::filesystem::path& path, AnnotationKind kind) {
  std::ifstream in(path);
  if (!in) raise(Errc::FileNotFound, "cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) raise(Errc::ParseError, "line 1: missing header");
  const auto header = split_csv_line(strip_cr(line));

  if (header.size() < 3 || header[0] != "image" || header[1] != "x" || header[2] != "y")
    raise(Errc::ParseError, "line 1: expected header image,x,y[,score]");
  const bool has_score = header.size() >= 4 && header[3] == "score";
  if (header.size() > 4 || (header.size() == 4 && !has_score))
    raise(Errc::ParseError, "line 1: expected header image,x,y[,score]");
  if (kind == AnnotationKind::Prediction && !has_score)
    raise(Errc::MissingColumn, "prediction file needs a score column");

  DetectionSet set;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      raise(Errc::ParseError, "line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(header.size()) + " columns, got " +
                                  std::to_string(cells.size()));

    Detection d;
    d.image_id = cells[0];
    if (d.image_id.empty())
      raise(Errc::ParseError, "line " + std::to_string(line_no) + ": empty image id");
    d.x = parse_double(cells[1], line_no, "x");
    d.y = parse_double(cells[2], line_no, "y");
    if (d.x < 0.0 || d.y < 0.0)
      raise(Errc::ParseError, "line " + std::to_string(line_no) + ": negative coordinate");

    if (kind == AnnotationKind::Prediction) {
      d.score = parse_double(cells[3], line_no, "score");
      if (d.score < 0.0 || d.score > 1.0)
        raise(Errc::ParseError, "line " + std::to_string(line_no) + ": score outside [0,1]");
    } else {
      d.score = 1.0;  // any score column is ignored for ground truth
    }
    set.entries.push_back(std::move(d));
  }
  return set;
}

}  // namespace stainkit
