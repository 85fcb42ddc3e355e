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


#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "retroroof/detect/losses.hpp"
#include "retroroof/error.hpp"

namespace retroroof::detect {

inline double center_iou(const CenterBox& a, const CenterBox& b) {
  const double iw = std::min(a.cx + a.w / 2, b.cx + b.w / 2) - std::max(a.cx - a.w / 2, b.cx - b.w / 2);
  const double ih = std::min(a.cy + a.h / 2, b.cy + b.h / 2) - std::max(a.cy - a.h / 2, b.cy - b.h / 2);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

/// Class-agnostic greedy suppression. Scores are objectness times the best
/// class probability; ties keep input order. At most `max_keep` survivors
/// (0 for no limit).
inline std::vector<BoxPrediction> nms(std::span<const BoxPrediction> preds, double iou_thresh, double conf_thresh,
                                      std::size_t max_keep = 0) {
  if (iou_thresh < 0 || iou_thresh > 1 || conf_thresh < 0 || conf_thresh > 1) {
    throw InvalidArgument("nms: thresholds must lie in [0, 1]");
  }
  std::vector<std::size_t> idx;
  std::vector<double> score(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    score[i] = preds[i].score();
    if (score[i] >= conf_thresh) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  std::vector<BoxPrediction> kept;
  for (std::size_t i : idx) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (center_iou(k.box, preds[i].box) > iou_thresh) {
        suppressed = true;
        break;
      }
    if (!suppressed) {
      kept.push_back(preds[i]);
      if (max_keep && kept.size() == max_keep) break;
    }
  }
  return kept;
}

}  // namespace retroroof::detect
