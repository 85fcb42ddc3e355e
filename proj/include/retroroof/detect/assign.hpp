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
 * @file assign.hpp
 * @brief Head grid geometry and center-cell target assignment.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "retroroof/annotations.hpp"
#include "retroroof/detect/losses.hpp"
#include "retroroof/error.hpp"

namespace retroroof::detect {

struct GridLevel {
  int stride = 8;
  int rows = 0;
  int cols = 0;
  std::size_t first_slot = 0;

  std::size_t slots() const noexcept { return static_cast<std::size_t>(rows) * cols; }
};

struct HeadGeometry {
  int image_width = 0;
  int image_height = 0;
  std::vector<GridLevel> levels;

  std::size_t slot_count() const noexcept {
    return levels.empty() ? 0 : levels.back().first_slot + levels.back().slots();
  }
  std::size_t slot(std::size_t level, int row, int col) const {
    const auto& l = levels.at(level);
    return l.first_slot + static_cast<std::size_t>(row) * l.cols + col;
  }
};

/// Grids for an input of the given size. Dims must divide by every stride.
inline HeadGeometry make_head_geometry(int width, int height, std::span<const int> strides) {
  if (strides.empty()) throw InvalidArgument("head geometry needs at least one stride");
  HeadGeometry g{width, height, {}};
  std::size_t first = 0;
  for (int s : strides) {
    if (s < 1 || width % s != 0 || height % s != 0) {
      throw DimensionMismatch("image " + std::to_string(width) + "x" + std::to_string(height) +
                              " is not divisible by stride " + std::to_string(s));
    }
    g.levels.push_back({s, height / s, width / s, first});
    first += g.levels.back().slots();
  }
  return g;
}

/// Predicted sizes span (0, 8 * stride) and sit at 2 * stride at init, so a
/// box prefers the level where its longer side is nearest 2 * stride.
inline std::vector<std::size_t> level_preference(double w, double h, const HeadGeometry& g) {
  std::vector<std::size_t> order(g.levels.size());
  std::iota(order.begin(), order.end(), 0);
  const double size = std::max(w, h);
  auto cost = [&](std::size_t l) { return std::abs(std::log(size / (2.0 * g.levels[l].stride))); };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cost(a) < cost(b); });
  return order;
}

/// Each ground truth goes to the cell containing its center, at its
/// preferred level. When that slot is already taken the next level is tried,
/// then neighbouring cells whose decode range still reaches the center.
/// Labels are category_id - 1.
inline TargetAssignment assign_targets(std::span<const annotations::GroundTruthBox> gts, const HeadGeometry& g,
                                       int num_classes = 1) {
  auto a = TargetAssignment::empty(g.slot_count());
  // larger boxes first so small ones take the fallbacks
  std::vector<std::size_t> order(gts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return gts[i].w * gts[i].h > gts[j].w * gts[j].h; });
  for (std::size_t idx : order) {
    const auto& b = gts[idx];
    if (!(b.w > 0) || !(b.h > 0)) throw InvalidArgument("assign_targets: box with non-positive size");
    const double cx = b.x + b.w / 2, cy = b.y + b.h / 2;
    if (cx < 0 || cy < 0 || cx >= g.image_width || cy >= g.image_height) {
      throw InvalidArgument("assign_targets: box center (" + std::to_string(cx) + ", " + std::to_string(cy) +
                            ") lies outside the image");
    }
    if (b.category_id < 1 || b.category_id > num_classes) {
      throw InvalidArgument("assign_targets: category " + std::to_string(b.category_id) + " out of range");
    }
    const auto prefs = level_preference(b.w, b.h, g);
    auto take = [&](std::size_t s) {
      a.positive[s] = 1;
      a.target[s] = {cx, cy, b.w, b.h};
      a.label[s] = b.category_id - 1;
    };
    bool done = false;
    for (std::size_t l : prefs) {
      const int st = g.levels[l].stride;
      const std::size_t s = g.slot(l, static_cast<int>(cy / st), static_cast<int>(cx / st));
      if (!a.positive[s]) {
        take(s);
        done = true;
        break;
      }
    }
    for (std::size_t l : prefs) {
      if (done) break;
      const auto& lv = g.levels[l];
      const int col = static_cast<int>(cx / lv.stride), row = static_cast<int>(cy / lv.stride);
      for (int dr = -1; dr <= 1 && !done; ++dr)
        for (int dc = -1; dc <= 1 && !done; ++dc) {
          const int r = row + dr, c = col + dc;
          if (r < 0 || c < 0 || r >= lv.rows || c >= lv.cols) continue;
          // center offsets reachable from cell c: (c - 0.5, c + 1.5) * stride
          if (cx <= (c - 0.5) * lv.stride || cx >= (c + 1.5) * lv.stride) continue;
          if (cy <= (r - 0.5) * lv.stride || cy >= (r + 1.5) * lv.stride) continue;
          const std::size_t s = g.slot(l, r, c);
          if (!a.positive[s]) {
            take(s);
            done = true;
          }
        }
    }
    if (!done) ++a.unassigned;
  }
  return a;
}

}  // namespace retroroof::detect
