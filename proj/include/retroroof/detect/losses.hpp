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
 * @file losses.hpp
 * @brief Composite detection loss: CIoU box term, objectness BCE and
 *        classification cross-entropy, with analytic gradients.
 */

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "retroroof/error.hpp"

namespace retroroof::detect {

/// Center-form box in pixels.
struct CenterBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  bool operator==(const CenterBox&) const = default;
};

/// One decoded prediction slot.
struct BoxPrediction {
  CenterBox box;
  double objectness = 0.5;
  std::vector<double> class_probs{1.0};

  double score() const {
    return objectness * *std::max_element(class_probs.begin(), class_probs.end());
  }
  int class_index() const {
    return static_cast<int>(std::max_element(class_probs.begin(), class_probs.end()) - class_probs.begin());
  }
};

struct LossWeights {
  double box = 7.5;
  double obj = 1.0;
  double cls = 0.5;

  /// Unweighted sum L_cls + L_box + L_obj.
  static LossWeights unit() { return {1.0, 1.0, 1.0}; }
};

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"box", w.box}, {"obj", w.obj}, {"cls", w.cls}};
}
inline void from_json(const nlohmann::json& j, LossWeights& w) {
  const LossWeights d;
  w.box = j.value("box", d.box);
  w.obj = j.value("obj", d.obj);
  w.cls = j.value("cls", d.cls);
  if (w.box < 0 || w.obj < 0 || w.cls < 0) throw InvalidArgument("loss weights must be non-negative");
}

inline constexpr double kCiouEps = 1e-9;
inline constexpr double kProbClamp = 1e-7;

struct CiouResult {
  double loss = 0.0;
  double iou = 0.0;
  std::array<double, 4> grad{};  // d loss / d (cx, cy, w, h) of the prediction
};

/// CIoU loss 1 - IoU + rho^2/c^2 + alpha*v and its gradient with respect to
/// the predicted box. alpha is differentiated too.
inline CiouResult ciou(const CenterBox& b, const CenterBox& p) {
  if (!(b.w > 0) || !(b.h > 0) || !(p.w > 0) || !(p.h > 0)) {
    throw InvalidArgument("ciou: boxes must have positive width and height");
  }
  const double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2, by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
  const double px1 = p.cx - p.w / 2, px2 = p.cx + p.w / 2, py1 = p.cy - p.h / 2, py2 = p.cy + p.h / 2;

  // intersection; d*/d(px1, px2, py1, py2)
  const double iw_raw = std::min(bx2, px2) - std::max(bx1, px1);
  const double ih_raw = std::min(by2, py2) - std::max(by1, py1);
  const bool overlap = iw_raw > 0 && ih_raw > 0;
  const double iw = overlap ? iw_raw : 0.0, ih = overlap ? ih_raw : 0.0;
  const double inter = iw * ih;
  const double area_b = b.w * b.h, area_p = p.w * p.h;
  const double uni = area_b + area_p - inter;
  const double iou = inter / uni;

  double d_iw_px1 = 0, d_iw_px2 = 0, d_ih_py1 = 0, d_ih_py2 = 0;
  if (overlap) {
    d_iw_px1 = px1 > bx1 ? -1.0 : 0.0;
    d_iw_px2 = px2 < bx2 ? 1.0 : 0.0;
    d_ih_py1 = py1 > by1 ? -1.0 : 0.0;
    d_ih_py2 = py2 < by2 ? 1.0 : 0.0;
  }
  // d inter / d corner
  const std::array<double, 4> d_inter = {d_iw_px1 * ih, d_iw_px2 * ih, d_ih_py1 * iw, d_ih_py2 * iw};

  // enclosing box
  const double cw = std::max(bx2, px2) - std::min(bx1, px1);
  const double ch = std::max(by2, py2) - std::min(by1, py1);
  const double c2 = cw * cw + ch * ch;
  const std::array<double, 4> d_c2 = {px1 < bx1 ? -2 * cw : 0.0, px2 > bx2 ? 2 * cw : 0.0,
                                      py1 < by1 ? -2 * ch : 0.0, py2 > by2 ? 2 * ch : 0.0};

  const double dx = p.cx - b.cx, dy = p.cy - b.cy;
  const double rho2 = dx * dx + dy * dy;

  constexpr double k = 4.0 / (std::numbers::pi * std::numbers::pi);
  const double dtheta = std::atan(b.w / b.h) - std::atan(p.w / p.h);
  const double v = k * dtheta * dtheta;
  const double denom = (1.0 - iou) + v + kCiouEps;
  const double alpha = v / denom;

  CiouResult r;
  r.iou = iou;
  r.loss = 1.0 - iou + rho2 / c2 + alpha * v;

  // alpha*v = v^2 / denom
  const double d_av_d_iou = v * v / (denom * denom);
  const double d_av_d_v = (2 * v * denom - v * v) / (denom * denom);
  const double d_l_d_iou = -1.0 + d_av_d_iou;
  const double d_l_d_c2 = -rho2 / (c2 * c2);

  // corners -> (cx, cy, w, h): x1 = cx - w/2, x2 = cx + w/2
  std::array<double, 4> g_corner{};
  for (int i = 0; i < 4; ++i) {
    const double d_iou = d_inter[i] / uni + inter * d_inter[i] / (uni * uni);  // area_p held fixed here
    g_corner[i] = d_l_d_iou * d_iou + d_l_d_c2 * d_c2[i];
  }
  // d IoU / d area_p at fixed inter
  const double d_iou_d_ap = -inter / (uni * uni);
  const double d_sq = 1.0 / (p.w * p.w + p.h * p.h);
  const double d_v_d_w = k * 2 * dtheta * (-p.h * d_sq);
  const double d_v_d_h = k * 2 * dtheta * (p.w * d_sq);

  r.grad[0] = g_corner[0] + g_corner[1] + 2 * dx / c2;
  r.grad[1] = g_corner[2] + g_corner[3] + 2 * dy / c2;
  r.grad[2] = 0.5 * (g_corner[1] - g_corner[0]) + d_l_d_iou * d_iou_d_ap * p.h + d_av_d_v * d_v_d_w;
  r.grad[3] = 0.5 * (g_corner[3] - g_corner[2]) + d_l_d_iou * d_iou_d_ap * p.w + d_av_d_v * d_v_d_h;
  return r;
}

inline double ciou_loss(const CenterBox& b, const CenterBox& p) { return ciou(b, p).loss; }

/// Per-slot targets. Slots are ordered level-major, then row, then column.
struct TargetAssignment {
  std::vector<std::uint8_t> positive;
  std::vector<CenterBox> target;  // valid where positive
  std::vector<int> label;         // class index where positive, else -1
  std::size_t unassigned = 0;     // ground truths that found no free slot

  std::size_t num_slots() const noexcept { return positive.size(); }
  std::size_t num_positive() const noexcept {
    return static_cast<std::size_t>(std::count(positive.begin(), positive.end(), 1));
  }
  static TargetAssignment empty(std::size_t n) { return {std::vector<std::uint8_t>(n, 0), std::vector<CenterBox>(n), std::vector<int>(n, -1), 0}; }
};

namespace detail {
inline void require_same_slots(const TargetAssignment& a, std::span<const BoxPrediction> preds) {
  if (a.num_slots() != preds.size()) throw DimensionMismatch("loss: assignment and predictions differ in slot count");
}
inline double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }
}  // namespace detail

/// Mean CIoU over positive slots; 0 without positives.
inline double box_loss(const TargetAssignment& a, std::span<const BoxPrediction> preds) {
  detail::require_same_slots(a, preds);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (a.positive[i]) {
      sum += ciou_loss(a.target[i], preds[i].box);
      ++n;
    }
  return n ? sum / static_cast<double>(n) : 0.0;
}

/// Binary cross-entropy of objectness, averaged over all N slots.
inline double objectness_loss(const TargetAssignment& a, std::span<const BoxPrediction> preds) {
  detail::require_same_slots(a, preds);
  if (preds.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double c = detail::clamp_prob(preds[i].objectness);
    sum += a.positive[i] ? std::log(c) : std::log(1.0 - c);
  }
  return -sum / static_cast<double>(preds.size());
}

/// Categorical cross-entropy over positive slots, averaged over positives.
inline double classification_loss(const TargetAssignment& a, std::span<const BoxPrediction> preds) {
  detail::require_same_slots(a, preds);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!a.positive[i]) continue;
    const auto& p = preds[i].class_probs;
    if (a.label[i] < 0 || a.label[i] >= static_cast<int>(p.size())) {
      throw InvalidArgument("classification_loss: label outside the class range");
    }
    const double q = p[static_cast<std::size_t>(a.label[i])];
    sum -= q >= 1.0 ? 0.0 : std::log(detail::clamp_prob(q));
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

inline double total_loss(const LossWeights& w, double l_box, double l_obj, double l_cls) {
  return w.box * l_box + w.obj * l_obj + w.cls * l_cls;
}

}  // namespace retroroof::detect
