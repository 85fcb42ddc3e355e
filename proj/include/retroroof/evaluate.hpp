// Copyright (c) 2026 The retroroof Authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


/**
 * @file evaluate.hpp
 * @brief Detection metrics (IoU, greedy matching, 101-point AP, P/R/F1) and
 *        the enhancement-variant comparison harness.
 */

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "retroroof/annotations.hpp"
#include "retroroof/error.hpp"

namespace retroroof::evaluate {

/// Top-left corner plus size, pixels.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  bool operator==(const Box&) const = default;
};

struct Detection {
  std::int64_t image_id = 0;
  Box box;
  double score = 0.0;

  bool operator==(const Detection&) const = default;
};

struct GroundTruth {
  std::int64_t image_id = 0;
  Box box;
};

inline double iou(const Box& a, const Box& b) {
  if (!(a.w > 0.0) || !(a.h > 0.0) || !(b.w > 0.0) || !(b.h > 0.0)) {
    throw InvalidArgument("iou: boxes must have positive width and height");
  }
  const double iw = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double ih = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

struct MatchResult {
  /// Prediction indices in the order they were matched (descending score,
  /// ties by input order).
  std::vector<std::size_t> order;
  std::vector<bool> true_positive;  // indexed like the input predictions
  std::vector<int> matched_gt;      // -1 when unmatched
  std::vector<double> match_iou;    // 0 when unmatched
  std::vector<bool> gt_matched;

  std::size_t tp() const { return static_cast<std::size_t>(std::count(true_positive.begin(), true_positive.end(), true)); }
  std::size_t fp() const { return true_positive.size() - tp(); }
  std::size_t fn() const {
    return static_cast<std::size_t>(std::count(gt_matched.begin(), gt_matched.end(), false));
  }
};

inline std::vector<std::size_t> score_order(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

/// Greedy matching for one image: in descending score order each prediction
/// takes the highest-IoU unmatched ground truth with IoU >= thresh.
inline MatchResult match(std::span<const Box> preds, std::span<const double> scores, std::span<const Box> gts,
                         double thresh) {
  if (preds.size() != scores.size()) throw DimensionMismatch("match: one score per prediction required");
  if (!(thresh > 0.0) || thresh > 1.0) throw InvalidArgument("match: threshold must lie in (0, 1]");
  MatchResult r;
  r.order = score_order(scores);
  r.true_positive.assign(preds.size(), false);
  r.matched_gt.assign(preds.size(), -1);
  r.match_iou.assign(preds.size(), 0.0);
  r.gt_matched.assign(gts.size(), false);
  for (std::size_t p : r.order) {
    int best = -1;
    double best_iou = thresh;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (r.gt_matched[g]) continue;
      const double v = iou(preds[p], gts[g]);
      if (v >= best_iou && (best < 0 || v > best_iou)) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      r.true_positive[p] = true;
      r.matched_gt[p] = best;
      r.match_iou[p] = best_iou;
      r.gt_matched[static_cast<std::size_t>(best)] = true;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Average precision
// ---------------------------------------------------------------------------

namespace detail {

struct Grouped {
  std::map<std::int64_t, std::vector<std::size_t>> preds;  // indices into the detection list
  std::map<std::int64_t, std::vector<Box>> gts;
  std::size_t gt_count = 0;
};

inline Grouped group(std::span<const Detection> dets, std::span<const GroundTruth> gts) {
  Grouped g;
  for (std::size_t i = 0; i < dets.size(); ++i) g.preds[dets[i].image_id].push_back(i);
  for (const auto& t : gts) g.gts[t.image_id].push_back(t.box);
  g.gt_count = gts.size();
  return g;
}

/// Per-detection TP flags after per-image greedy matching.
inline std::vector<bool> tp_flags(std::span<const Detection> dets, const Grouped& g, double thresh) {
  std::vector<bool> tp(dets.size(), false);
  static const std::vector<Box> none;
  for (const auto& [image, idx] : g.preds) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (std::size_t i : idx) {
      boxes.push_back(dets[i].box);
      scores.push_back(dets[i].score);
    }
    const auto it = g.gts.find(image);
    const auto m = match(boxes, scores, it == g.gts.end() ? none : it->second, thresh);
    for (std::size_t k = 0; k < idx.size(); ++k) tp[idx[k]] = m.true_positive[k];
  }
  return tp;
}

}  // namespace detail

inline constexpr int kRecallPoints = 101;

/// 101-point interpolated AP over all images at one IoU threshold. Detections
/// are ranked globally by score, ties kept in input order. Returns nothing
/// when there is no ground truth.
inline std::optional<double> average_precision(std::span<const Detection> dets,
                                               std::span<const GroundTruth> gts, double thresh) {
  if (gts.empty()) return std::nullopt;
  const auto g = detail::group(dets, gts);
  const auto tp = detail::tp_flags(dets, g, thresh);
  std::vector<double> scores;
  scores.reserve(dets.size());
  for (const auto& d : dets) scores.push_back(d.score);
  const auto order = score_order(scores);

  const double n_gt = static_cast<double>(g.gt_count);
  std::vector<double> recall(order.size()), precision(order.size());
  double ctp = 0.0, cfp = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (tp[order[k]] ? ctp : cfp) += 1.0;
    recall[k] = ctp / n_gt;
    precision[k] = ctp / (ctp + cfp);
  }
  for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double sum = 0.0;
  for (int i = 0; i < kRecallPoints; ++i) {
    const double r = i / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / kRecallPoints;
}

inline std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.50 + 0.05 * i);
  return t;
}

/// Mean AP over the given IoU thresholds.
inline std::optional<double> map_at(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                                    std::span<const double> thresholds) {
  if (thresholds.empty()) throw InvalidArgument("map_at: no thresholds");
  if (gts.empty()) return std::nullopt;
  double sum = 0.0;
  for (double t : thresholds) sum += *average_precision(dets, gts, t);
  return sum / static_cast<double>(thresholds.size());
}

inline std::optional<double> map50(std::span<const Detection> dets, std::span<const GroundTruth> gts) {
  const double t = 0.5;
  return map_at(dets, gts, std::span<const double>(&t, 1));
}

inline std::optional<double> map50_95(std::span<const Detection> dets, std::span<const GroundTruth> gts) {
  return map_at(dets, gts, coco_thresholds());
}

// ---------------------------------------------------------------------------
// Precision / recall / F1
// ---------------------------------------------------------------------------

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

/// Zero-denominator conventions: precision is 1 when nothing was predicted
/// and nothing was missed, else 0; recall is 1 when there is no ground truth.
inline PrecisionRecall precision_recall_f1(std::size_t tp, std::size_t fp, std::size_t fn) {
  PrecisionRecall r{0, 0, 0, tp, fp, fn};
  r.precision = tp + fp == 0 ? (fn == 0 ? 1.0 : 0.0) : double(tp) / double(tp + fp);
  r.recall = tp + fn == 0 ? 1.0 : double(tp) / double(tp + fn);
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

inline constexpr double kDefaultConfidence = 0.25;

/// Counts over all images at the given operating point. Images without
/// ground truth add only false positives.
inline PrecisionRecall precision_recall_f1(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                                           double iou_thresh = 0.5, double conf = kDefaultConfidence) {
  std::vector<Detection> kept;
  for (const auto& d : dets)
    if (d.score >= conf) kept.push_back(d);
  const auto g = detail::group(kept, gts);
  const auto tp = detail::tp_flags(kept, g, iou_thresh);
  const std::size_t n_tp = static_cast<std::size_t>(std::count(tp.begin(), tp.end(), true));
  return precision_recall_f1(n_tp, kept.size() - n_tp, gts.size() - n_tp);
}

// ---------------------------------------------------------------------------
// Prediction files
// ---------------------------------------------------------------------------

/// One detection per line: image_id x y w h score (x, y top-left).
inline void write_predictions(std::span<const Detection> dets, const std::filesystem::path& path) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (const auto& d : dets)
    out << d.image_id << ' ' << d.box.x << ' ' << d.box.y << ' ' << d.box.w << ' ' << d.box.h << ' ' << d.score
        << '\n';
  annotations::detail::write_text_atomic(path, out.str());
}

inline std::vector<Detection> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions: " + path.string());
  std::vector<Detection> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
    std::istringstream ls(line);
    Detection d;
    if (!(ls >> d.image_id >> d.box.x >> d.box.y >> d.box.w >> d.box.h >> d.score)) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected 'image_id x y w h score'");
    }
    if (!(d.box.w > 0.0) || !(d.box.h > 0.0)) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": non-positive box size");
    }
    out.push_back(d);
  }
  return out;
}

inline std::vector<GroundTruth> ground_truth_of(const annotations::CocoDataset& d) {
  std::vector<GroundTruth> out;
  for (const auto& a : d.annotations) out.push_back({a.image_id, {a.bbox[0], a.bbox[1], a.bbox[2], a.bbox[3]}});
  return out;
}

// ---------------------------------------------------------------------------
// Variant comparison
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> v = {"bw", "color", "bw_upscaled", "color_upscaled"};
  return v;
}

struct VariantRun {
  std::string variant;
  std::string model;
  std::filesystem::path predictions;
  std::filesystem::path ground_truth;
};

struct VariantMetrics {
  std::string variant;
  std::string model;
  double map50 = 0.0;
  double map50_95 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct VariantReport {
  std::vector<VariantMetrics> rows;

  const VariantMetrics* find(const std::string& model, const std::string& variant) const {
    for (const auto& r : rows)
      if (r.model == model && r.variant == variant) return &r;
    return nullptr;
  }
};

inline VariantMetrics evaluate_run(const std::string& variant, const std::string& model,
                                   std::span<const Detection> dets, const annotations::CocoDataset& gt,
                                   double conf = kDefaultConfidence) {
  std::set<std::int64_t> ids;
  for (const auto& im : gt.images) ids.insert(im.id);
  for (const auto& d : dets)
    if (!ids.count(d.image_id)) {
      throw ValidationError("variant " + variant + ", model " + model + ": prediction for image " +
                            std::to_string(d.image_id) + " which is not in the ground truth");
    }
  const auto gts = ground_truth_of(gt);
  const auto prf = precision_recall_f1(dets, gts, 0.5, conf);
  return {variant, model, map50(dets, gts).value_or(0.0), map50_95(dets, gts).value_or(0.0), prf.precision,
          prf.recall, prf.f1};
}

/// Evaluates every run from its prediction dump and COCO ground truth.
inline VariantReport compare_variants(std::span<const VariantRun> runs, double conf = kDefaultConfidence) {
  VariantReport report;
  for (const auto& run : runs) {
    if (!std::filesystem::exists(run.ground_truth)) throw IoError("missing ground truth: " + run.ground_truth.string());
    if (!std::filesystem::exists(run.predictions)) throw IoError("missing predictions: " + run.predictions.string());
    const auto gt = annotations::read_coco(run.ground_truth);
    const auto dets = read_predictions(run.predictions);
    report.rows.push_back(evaluate_run(run.variant, run.model, dets, gt, conf));
  }
  return report;
}

inline std::string format_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// variant,model,mAP50,mAP5095,precision,recall,f1 with shortest round-trip
/// numbers.
inline std::string render_csv(const VariantReport& r) {
  std::string out = "variant,model,mAP50,mAP5095,precision,recall,f1\n";
  for (const auto& m : r.rows)
    out += m.variant + "," + m.model + "," + format_number(m.map50) + "," + format_number(m.map50_95) + "," +
           format_number(m.precision) + "," + format_number(m.recall) + "," + format_number(m.f1) + "\n";
  return out;
}

/// The B&W column reads the upscaled grayscale run when present, the plain
/// one otherwise; Colored likewise.
inline const VariantMetrics* table_cell_source(const VariantReport& r, const std::string& model, bool colored) {
  const auto* up = r.find(model, colored ? "color_upscaled" : "bw_upscaled");
  return up ? up : r.find(model, colored ? "color" : "bw");
}

/// Model x {mAP@50, Recall} x {B&W, Colored}, one row per model in order of
/// first appearance. Missing cells print "-".
inline std::string render_table(const VariantReport& r, int decimals = 4) {
  std::vector<std::string> models;
  for (const auto& m : r.rows)
    if (std::find(models.begin(), models.end(), m.model) == models.end()) models.push_back(m.model);
  const std::vector<std::string> header = {"Model", "mAP@50 (B&W)", "Recall (B&W)", "mAP@50 (Colored)",
                                           "Recall (Colored)"};
  std::vector<std::vector<std::string>> cells{header};
  auto fmt = [&](const VariantMetrics* m, bool map) {
    if (!m) return std::string("-");
    std::ostringstream s;
    s << std::fixed << std::setprecision(decimals) << (map ? m->map50 : m->recall);
    return s.str();
  };
  for (const auto& model : models) {
    const auto* bw = table_cell_source(r, model, false);
    const auto* col = table_cell_source(r, model, true);
    cells.push_back({model, fmt(bw, true), fmt(bw, false), fmt(col, true), fmt(col, false)});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  auto line = [&](const std::vector<std::string>& row) {
    std::string s = "|";
    for (std::size_t c = 0; c < row.size(); ++c)
      s += " " + row[c] + std::string(width[c] - row[c].size(), ' ') + " |";
    return s + "\n";
  };
  std::string rule = "|";
  for (std::size_t w : width) rule += std::string(w + 2, '-') + "|";
  std::string out = line(cells[0]) + rule + "\n";
  for (std::size_t i = 1; i < cells.size(); ++i) out += line(cells[i]);
  return out;
}

}  // namespace retroroof::evaluate
