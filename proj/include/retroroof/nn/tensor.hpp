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
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "retroroof/error.hpp"
#include "retroroof/imagery.hpp"

namespace retroroof::nn {

/// Single-image feature map in CHW order.
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(int channels, int height, int width, float fill = 0.f)
      : c(channels), h(height), w(width),
        v(static_cast<std::size_t>(channels) * height * width, fill) {}

  std::size_t size() const noexcept { return v.size(); }
  std::size_t plane_size() const noexcept { return static_cast<std::size_t>(h) * w; }
  float& at(int ch, int y, int x) noexcept {
    return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  float at(int ch, int y, int x) const noexcept {
    return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  float* data() noexcept { return v.data(); }
  const float* data() const noexcept { return v.data(); }
  bool same_shape(const Tensor& o) const noexcept { return c == o.c && h == o.h && w == o.w; }
  bool operator==(const Tensor&) const = default;
};

inline bool all_finite(std::span<const float> xs) noexcept {
  return std::all_of(xs.begin(), xs.end(), [](float x) { return std::isfinite(x); });
}

inline Tensor to_tensor(const Raster& r, double scale = 1.0, double shift = 0.0) {
  Tensor t(r.channels(), r.height(), r.width());
  auto s = r.samples();
  for (std::size_t i = 0; i < s.size(); ++i) t.v[i] = static_cast<float>(s[i] * scale + shift);
  return t;
}

inline Raster to_raster(const Tensor& t, ChannelLayout layout, double scale = 1.0,
                        double shift = 0.0) {
  if (t.c != channel_count(layout)) {
    throw ChannelMismatch("tensor has " + std::to_string(t.c) + " channels, layout " +
                          to_string(layout) + " needs " + std::to_string(channel_count(layout)));
  }
  Raster r(t.w, t.h, layout);
  auto s = r.samples();
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<double>(t.v[i]) * scale + shift;
  return r;
}

/// Zero-pads on the right and bottom so both dims are multiples of `multiple`.
inline Tensor pad_to_multiple(const Tensor& t, int multiple) {
  const int h = (t.h + multiple - 1) / multiple * multiple;
  const int w = (t.w + multiple - 1) / multiple * multiple;
  if (h == t.h && w == t.w) return t;
  Tensor out(t.c, h, w);
  for (int c = 0; c < t.c; ++c)
    for (int y = 0; y < t.h; ++y)
      std::copy_n(&t.v[(static_cast<std::size_t>(c) * t.h + y) * t.w], t.w,
                  &out.v[(static_cast<std::size_t>(c) * h + y) * w]);
  return out;
}

/// Edge-replicating pad to a multiple of `multiple`.
inline Tensor replicate_pad_to_multiple(const Tensor& t, int multiple) {
  const int h = (t.h + multiple - 1) / multiple * multiple;
  const int w = (t.w + multiple - 1) / multiple * multiple;
  if (h == t.h && w == t.w) return t;
  Tensor out(t.c, h, w);
  for (int c = 0; c < t.c; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = t.at(c, std::min(y, t.h - 1), std::min(x, t.w - 1));
  return out;
}

inline Tensor crop_tensor(const Tensor& t, int h, int w) {
  if (h == t.h && w == t.w) return t;
  Tensor out(t.c, h, w);
  for (int c = 0; c < t.c; ++c)
    for (int y = 0; y < h; ++y)
      std::copy_n(&t.v[(static_cast<std::size_t>(c) * t.h + y) * t.w], w,
                  &out.v[(static_cast<std::size_t>(c) * h + y) * w]);
  return out;
}

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a base seed and a tag.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace retroroof::nn
