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
 * @file synthetic.hpp
 * @brief Seeded synthetic rooftop benchmark: rectangular roofs rendered on
 *        textured ground, with exact boxes.
 */

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "retroroof/annotations.hpp"
#include "retroroof/error.hpp"
#include "retroroof/imagery.hpp"
#include "retroroof/nn/tensor.hpp"

namespace retroroof::pipeline {

struct SceneConfig {
  int size = 64;
  int min_roofs = 1;
  int max_roofs = 4;
  int min_side = 8;
  int max_side = 24;
  int margin = 2;  // free pixels kept between roofs
};

inline void to_json(nlohmann::json& j, const SceneConfig& c) {
  j = {{"size", c.size},         {"min_roofs", c.min_roofs}, {"max_roofs", c.max_roofs},
       {"min_side", c.min_side}, {"max_side", c.max_side},   {"margin", c.margin}};
}
inline void from_json(const nlohmann::json& j, SceneConfig& c) {
  const SceneConfig d;
  c.size = j.value("size", d.size);
  c.min_roofs = j.value("min_roofs", d.min_roofs);
  c.max_roofs = j.value("max_roofs", d.max_roofs);
  c.min_side = j.value("min_side", d.min_side);
  c.max_side = j.value("max_side", d.max_side);
  c.margin = j.value("margin", d.margin);
}

struct SyntheticScene {
  Raster image;  // RGB in [0,1]
  std::vector<annotations::GroundTruthBox> boxes;
};

namespace detail {

using Rgb = std::array<double, 3>;

// Ground and roof palettes. Roofs differ from ground mostly in hue; their
// lightness overlaps the ground's range.
inline const std::array<Rgb, 4>& ground_palette() {
  static const std::array<Rgb, 4> p = {{{0.36, 0.45, 0.25}, {0.45, 0.42, 0.30}, {0.30, 0.40, 0.28},
                                        {0.50, 0.47, 0.36}}};
  return p;
}
inline const std::array<Rgb, 5>& roof_palette() {
  static const std::array<Rgb, 5> p = {{{0.62, 0.26, 0.20}, {0.55, 0.33, 0.25}, {0.32, 0.36, 0.52},
                                        {0.66, 0.56, 0.42}, {0.42, 0.42, 0.45}}};
  return p;
}

}  // namespace detail

/// Renders one scene. The same (config, seed) always gives the same pixels.
inline SyntheticScene render_scene(const SceneConfig& cfg, std::uint64_t seed) {
  if (cfg.size < 16 || cfg.min_side < 2 || cfg.max_side < cfg.min_side || cfg.max_side > cfg.size ||
      cfg.min_roofs < 0 || cfg.max_roofs < cfg.min_roofs) {
    throw InvalidArgument("render_scene: inconsistent scene config");
  }
  nn::Rng rng(nn::mix_seed(seed, 0x5CE));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const int n = cfg.size;
  SyntheticScene s{Raster(n, n, ChannelLayout::Rgb), {}};

  // ground: palette color, two sinusoid layers, a darker field patch, speckle
  const auto& gp = detail::ground_palette();
  const auto base = gp[static_cast<std::size_t>(u(rng) * gp.size()) % gp.size()];
  const double f1 = 0.1 + 0.3 * u(rng), f2 = 0.2 + 0.5 * u(rng), ph1 = 6.28 * u(rng), ph2 = 6.28 * u(rng);
  const double th = 3.14159 * u(rng);
  const double px = n * u(rng), py = n * u(rng), pr = n * (0.2 + 0.3 * u(rng));
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double a = std::sin(f1 * (x * std::cos(th) + y * std::sin(th)) + ph1);
      const double b = std::sin(f2 * (x * std::sin(th) - y * std::cos(th)) + ph2);
      const double patch = std::hypot(x - px, y - py) < pr ? -0.06 : 0.0;
      const double t = 0.05 * a + 0.03 * b + patch;
      for (int c = 0; c < 3; ++c) s.image.at(c, y, x) = base[c] + t + 0.025 * noise(rng);
    }

  // roofs: rejection-sample non-overlapping rectangles
  std::uniform_int_distribution<int> count(cfg.min_roofs, cfg.max_roofs), side(cfg.min_side, cfg.max_side);
  const int want = count(rng);
  const auto& rp = detail::roof_palette();
  for (int attempt = 0; attempt < 200 && static_cast<int>(s.boxes.size()) < want; ++attempt) {
    const int w = side(rng), h = side(rng);
    std::uniform_int_distribution<int> xs(0, n - w), ys(0, n - h);
    const int x0 = xs(rng), y0 = ys(rng);
    bool clash = false;
    for (const auto& b : s.boxes)
      if (x0 < b.x + b.w + cfg.margin && b.x < x0 + w + cfg.margin && y0 < b.y + b.h + cfg.margin &&
          b.y < y0 + h + cfg.margin) {
        clash = true;
        break;
      }
    if (clash) continue;
    const auto col = rp[static_cast<std::size_t>(u(rng) * rp.size()) % rp.size()];
    const double shade = 0.9 + 0.2 * u(rng);
    const bool ridge_x = w >= h;
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) {
        // gable: the two roof halves are lit differently
        const bool far_half = ridge_x ? (y - y0) * 2 >= h : (x - x0) * 2 >= w;
        const double lit = far_half ? 0.88 : 1.0;
        for (int c = 0; c < 3; ++c) s.image.at(c, y, x) = col[c] * shade * lit + 0.015 * noise(rng);
      }
    // cast shadow along the bottom and right edges, outside the box
    for (int y = y0 + 1; y <= std::min(n - 1, y0 + h); ++y)
      for (int x = x0 + 1; x <= std::min(n - 1, x0 + w); ++x)
        if (y == y0 + h || x == x0 + w)
          for (int c = 0; c < 3; ++c) s.image.at(c, y, x) *= 0.6;
    s.boxes.push_back({double(x0), double(y0), double(w), double(h), 1, annotations::BoxSource::Auto});
  }
  for (double& v : s.image.samples()) v = std::clamp(v, 0.0, 1.0);
  return s;
}

inline std::vector<SyntheticScene> render_benchmark(const SceneConfig& cfg, int count, std::uint64_t seed) {
  std::vector<SyntheticScene> out;
  out.reserve(static_cast<std::size_t>(std::max(0, count)));
  for (int i = 0; i < count; ++i) out.push_back(render_scene(cfg, nn::mix_seed(seed, static_cast<std::uint64_t>(i))));
  return out;
}

}  // namespace retroroof::pipeline
