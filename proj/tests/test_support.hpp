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

// Shared fixtures and reference implementations for the test suite.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "retroroof/imagery.hpp"

namespace testing_support {

using retroroof::ChannelLayout;
using retroroof::Raster;

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("retroroof_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline Raster random_raster(int w, int h, ChannelLayout layout, std::uint64_t seed, double lo = 0.0,
                            double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Raster r(w, h, layout);
  for (double& v : r.samples()) v = u(rng);
  return r;
}

/// Smooth colored scene: a few soft blobs and rectangles over a gradient.
/// Used wherever a learnable, natural-ish image is needed.
inline Raster synthetic_scene(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Raster r(w, h, ChannelLayout::Rgb);
  const double g0 = 0.3 + 0.2 * u(rng), g1 = 0.4 + 0.2 * u(rng), g2 = 0.2 + 0.2 * u(rng);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double t = 0.15 * (x + y) / double(w + h);
      r.at(0, y, x) = g0 + t;
      r.at(1, y, x) = g1 + t;
      r.at(2, y, x) = g2;
    }
  const int n = 2 + static_cast<int>(u(rng) * 3);
  for (int k = 0; k < n; ++k) {
    const int bw = 4 + static_cast<int>(u(rng) * w / 3), bh = 4 + static_cast<int>(u(rng) * h / 3);
    const int x0 = static_cast<int>(u(rng) * (w - bw)), y0 = static_cast<int>(u(rng) * (h - bh));
    const double c0 = 0.5 + 0.4 * u(rng), c1 = 0.2 + 0.3 * u(rng), c2 = 0.1 + 0.3 * u(rng);
    for (int y = y0; y < y0 + bh; ++y)
      for (int x = x0; x < x0 + bw; ++x) {
        r.at(0, y, x) = c0;
        r.at(1, y, x) = c1;
        r.at(2, y, x) = c2;
      }
  }
  return r;
}

/// Band-limited texture: a sum of random oriented sinusoids per channel.
inline Raster textured_scene(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double fx[4], fy[4], ph[4], amp[4][3];
  for (int k = 0; k < 4; ++k) {
    fx[k] = (u(rng) - 0.5) * 0.9;
    fy[k] = (u(rng) - 0.5) * 0.9;
    ph[k] = u(rng) * 6.283185307179586;
    for (int c = 0; c < 3; ++c) amp[k][c] = 0.08 * u(rng);
  }
  Raster r(w, h, ChannelLayout::Rgb);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double v = 0.5;
        for (int k = 0; k < 4; ++k) v += amp[k][c] * std::sin(fx[k] * x + fy[k] * y + ph[k]);
        r.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
  return r;
}

/// Keys cubic convolution kernel, a = -0.5.
inline double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2) * t - (a + 3)) * t * t + 1;
  if (t < 2.0) return ((a * t - 5 * a) * t + 8 * a) * t - 4 * a;
  return 0.0;
}

/// Bicubic upscale with pixel-center alignment and clamped borders,
/// clipped to [lo, hi].
inline Raster bicubic_upscale(const Raster& src, int s, double lo = 0.0, double hi = 1.0) {
  Raster out(src.width() * s, src.height() * s, src.layout());
  auto clampi = [](int v, int n) { return std::clamp(v, 0, n - 1); };
  for (int c = 0; c < src.channels(); ++c)
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) {
        const double sy = (y + 0.5) / s - 0.5, sx = (x + 0.5) / s - 0.5;
        const int iy = static_cast<int>(std::floor(sy)), ix = static_cast<int>(std::floor(sx));
        double acc = 0.0;
        for (int m = -1; m <= 2; ++m)
          for (int n = -1; n <= 2; ++n)
            acc += cubic_weight(sy - (iy + m)) * cubic_weight(sx - (ix + n)) *
                   src.at(c, clampi(iy + m, src.height()), clampi(ix + n, src.width()));
        out.at(c, y, x) = std::clamp(acc, lo, hi);
      }
  return out;
}

inline double max_abs_diff(const Raster& a, const Raster& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.samples().size(); ++i)
    m = std::max(m, std::abs(a.samples()[i] - b.samples()[i]));
  return m;
}

}  // namespace testing_support
