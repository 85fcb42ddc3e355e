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
 * @file imagery.hpp
 * @brief Raster container, CIELAB conversion, tiling and georeferencing.
 *
 * Rasters are planar (channel-major) arrays of doubles. Value conventions per
 * layout: RGB in [0,1] (sRGB, D65), L in [0,100], a/b in [-128,128].
 */

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "retroroof/error.hpp"

namespace retroroof {

enum class ChannelLayout { Luminance, Rgb, Lab };

constexpr int channel_count(ChannelLayout layout) noexcept {
  return layout == ChannelLayout::Luminance ? 1 : 3;
}

inline const char* to_string(ChannelLayout layout) noexcept {
  switch (layout) {
    case ChannelLayout::Luminance: return "L";
    case ChannelLayout::Rgb: return "RGB";
    case ChannelLayout::Lab: return "LAB";
  }
  return "?";
}

class Raster {
 public:
  Raster() = default;

  Raster(int width, int height, ChannelLayout layout, double fill = 0.0)
      : width_(width), height_(height), layout_(layout) {
    if (width < 1 || height < 1) {
      throw InvalidArgument("raster dimensions must be >= 1, got " + std::to_string(width) +
                            "x" + std::to_string(height));
    }
    samples_.assign(static_cast<std::size_t>(width) * height * channel_count(layout), fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channel_count(layout_); }
  ChannelLayout layout() const noexcept { return layout_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * height_;
  }
  bool empty() const noexcept { return samples_.empty(); }

  double& at(int c, int y, int x) noexcept { return samples_[index(c, y, x)]; }
  double at(int c, int y, int x) const noexcept { return samples_[index(c, y, x)]; }

  std::span<double> plane(int c) noexcept {
    return {samples_.data() + static_cast<std::size_t>(c) * pixel_count(), pixel_count()};
  }
  std::span<const double> plane(int c) const noexcept {
    return {samples_.data() + static_cast<std::size_t>(c) * pixel_count(), pixel_count()};
  }

  std::span<double> samples() noexcept { return samples_; }
  std::span<const double> samples() const noexcept { return samples_; }

  /// Re-tags the raster without touching samples. Used by conversions that
  /// write in place.
  void retag(ChannelLayout layout) {
    if (channel_count(layout) != channels()) {
      throw ChannelMismatch("cannot retag a " + std::string(to_string(layout_)) + " raster as " +
                            to_string(layout));
    }
    layout_ = layout;
  }

  bool operator==(const Raster&) const = default;

 private:
  std::size_t index(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  ChannelLayout layout_ = ChannelLayout::Luminance;
  std::vector<double> samples_;
};

inline void require_layout(const Raster& r, ChannelLayout expected, const char* op) {
  if (r.layout() != expected) {
    throw ChannelMismatch(std::string(op) + ": expected " + to_string(expected) + " raster, got " +
                          to_string(r.layout()));
  }
}

inline void require_same_dims(const Raster& a, const Raster& b, const char* op) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw DimensionMismatch(std::string(op) + ": " + std::to_string(a.width()) + "x" +
                            std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                            std::to_string(b.height()));
  }
}

// ---------------------------------------------------------------------------
// Color
// ---------------------------------------------------------------------------

namespace color {

using Mat3 = std::array<std::array<double, 3>, 3>;

// Linear sRGB -> XYZ (D65).
inline constexpr Mat3 kRgbToXyz = {{{0.4124564, 0.3575761, 0.1804375},
                                    {0.2126729, 0.7151522, 0.0721750},
                                    {0.0193339, 0.1191920, 0.9503041}}};

constexpr Mat3 invert(const Mat3& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  Mat3 r{};
  r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return r;
}

inline constexpr Mat3 kXyzToRgb = invert(kRgbToXyz);

// Reference white is the image of RGB (1,1,1) so white maps to a=b=0 exactly.
inline constexpr std::array<double, 3> kWhite = {
    kRgbToXyz[0][0] + kRgbToXyz[0][1] + kRgbToXyz[0][2],
    kRgbToXyz[1][0] + kRgbToXyz[1][1] + kRgbToXyz[1][2],
    kRgbToXyz[2][0] + kRgbToXyz[2][1] + kRgbToXyz[2][2]};

inline constexpr double kDelta = 6.0 / 29.0;

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double linear_to_srgb(double c) {
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

inline double lab_f(double t) {
  return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

inline double lab_finv(double t) {
  return t > kDelta ? t * t * t : 3.0 * kDelta * kDelta * (t - 4.0 / 29.0);
}

inline std::array<double, 3> rgb_to_lab(std::array<double, 3> rgb) {
  std::array<double, 3> lin{};
  for (int i = 0; i < 3; ++i) lin[i] = srgb_to_linear(rgb[i]);
  std::array<double, 3> f{};
  for (int i = 0; i < 3; ++i) {
    const double v = kRgbToXyz[i][0] * lin[0] + kRgbToXyz[i][1] * lin[1] + kRgbToXyz[i][2] * lin[2];
    f[i] = lab_f(v / kWhite[i]);
  }
  return {116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])};
}

/// Inverse of rgb_to_lab; out-of-gamut results are clipped to [0,1].
inline std::array<double, 3> lab_to_rgb(std::array<double, 3> lab) {
  const double fy = (lab[0] + 16.0) / 116.0;
  const double fx = fy + lab[1] / 500.0;
  const double fz = fy - lab[2] / 200.0;
  const std::array<double, 3> xyz = {kWhite[0] * lab_finv(fx), kWhite[1] * lab_finv(fy),
                                     kWhite[2] * lab_finv(fz)};
  std::array<double, 3> rgb{};
  for (int i = 0; i < 3; ++i) {
    const double lin = kXyzToRgb[i][0] * xyz[0] + kXyzToRgb[i][1] * xyz[1] + kXyzToRgb[i][2] * xyz[2];
    rgb[i] = std::clamp(linear_to_srgb(std::max(lin, 0.0)), 0.0, 1.0);
  }
  return rgb;
}

}  // namespace color

inline Raster rgb_to_lab(const Raster& rgb) {
  require_layout(rgb, ChannelLayout::Rgb, "rgb_to_lab");
  Raster out(rgb.width(), rgb.height(), ChannelLayout::Lab);
  const std::size_t n = rgb.pixel_count();
  auto r = rgb.plane(0), g = rgb.plane(1), b = rgb.plane(2);
  auto l = out.plane(0), a = out.plane(1), bb = out.plane(2);
  for (std::size_t i = 0; i < n; ++i) {
    const auto lab = color::rgb_to_lab({r[i], g[i], b[i]});
    l[i] = lab[0];
    a[i] = lab[1];
    bb[i] = lab[2];
  }
  return out;
}

inline Raster lab_to_rgb(const Raster& lab) {
  require_layout(lab, ChannelLayout::Lab, "lab_to_rgb");
  Raster out(lab.width(), lab.height(), ChannelLayout::Rgb);
  const std::size_t n = lab.pixel_count();
  auto l = lab.plane(0), a = lab.plane(1), b = lab.plane(2);
  auto r = out.plane(0), g = out.plane(1), bb = out.plane(2);
  for (std::size_t i = 0; i < n; ++i) {
    const auto rgb = color::lab_to_rgb({l[i], a[i], b[i]});
    r[i] = rgb[0];
    g[i] = rgb[1];
    bb[i] = rgb[2];
  }
  return out;
}

/// Linear rescale of an 8-bit single-channel scan (0..255) to L in [0,100].
inline Raster gray_to_luminance(const Raster& scan) {
  if (scan.channels() != 1) {
    throw ChannelMismatch("gray_to_luminance: expected a single-channel scan, got " +
                          std::to_string(scan.channels()) + " channels");
  }
  Raster out(scan.width(), scan.height(), ChannelLayout::Luminance);
  auto src = scan.samples();
  auto dst = out.samples();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * 100.0 / 255.0;
  return out;
}

/// Renders a luminance raster as gray RGB (zero chroma).
inline Raster luminance_to_rgb(const Raster& l) {
  require_layout(l, ChannelLayout::Luminance, "luminance_to_rgb");
  Raster lab(l.width(), l.height(), ChannelLayout::Lab);
  std::copy(l.plane(0).begin(), l.plane(0).end(), lab.plane(0).begin());
  return lab_to_rgb(lab);
}

/// Luminance channel of an RGB or LAB raster.
inline Raster extract_luminance(const Raster& r) {
  if (r.layout() == ChannelLayout::Luminance) return r;
  const Raster lab = r.layout() == ChannelLayout::Lab ? r : rgb_to_lab(r);
  Raster out(r.width(), r.height(), ChannelLayout::Luminance);
  std::copy(lab.plane(0).begin(), lab.plane(0).end(), out.plane(0).begin());
  return out;
}

// ---------------------------------------------------------------------------
// Tiling
// ---------------------------------------------------------------------------

struct TileOffset {
  int x = 0;
  int y = 0;
  bool operator==(const TileOffset&) const = default;
  auto operator<=>(const TileOffset&) const = default;
};

struct TileGrid {
  int tile_size = 0;
  int source_width = 0;
  int source_height = 0;
  std::vector<TileOffset> offsets;  // row-major: y outer, x inner
};

namespace detail {
inline std::vector<int> axis_offsets(int dim, int tile, int step) {
  std::vector<int> out;
  for (int o = 0;; o += step) {
    if (o + tile >= dim) {
      out.push_back(dim - tile);
      break;
    }
    out.push_back(o);
  }
  return out;
}
}  // namespace detail

/// Offsets advance by (tile - overlap); the last tile on each axis is
/// clamped flush to the border, so no padding is ever synthesized.
inline TileGrid make_tile_grid(int width, int height, int tile, int overlap) {
  if (overlap < 0 || overlap >= tile) {
    throw TilingError("tile overlap must satisfy 0 <= overlap < tile (overlap=" +
                      std::to_string(overlap) + ", tile=" + std::to_string(tile) + ")");
  }
  if (tile > std::min(width, height)) {
    throw TilingError("tile size " + std::to_string(tile) + " exceeds image dimension " +
                      std::to_string(width) + "x" + std::to_string(height));
  }
  TileGrid grid{tile, width, height, {}};
  const auto xs = detail::axis_offsets(width, tile, tile - overlap);
  const auto ys = detail::axis_offsets(height, tile, tile - overlap);
  for (int y : ys)
    for (int x : xs) grid.offsets.push_back({x, y});
  return grid;
}

/// The same tiling expressed at `factor` times the resolution.
inline TileGrid scale_grid(const TileGrid& grid, int factor) {
  TileGrid out{grid.tile_size * factor, grid.source_width * factor, grid.source_height * factor, {}};
  out.offsets.reserve(grid.offsets.size());
  for (const auto& o : grid.offsets) out.offsets.push_back({o.x * factor, o.y * factor});
  return out;
}

/// Copies the (w x h) window at (x0, y0). The window must lie inside `src`.
inline Raster crop(const Raster& src, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || x0 + w > src.width() || y0 + h > src.height()) {
    throw TilingError("crop window out of bounds");
  }
  Raster out(w, h, src.layout());
  for (int c = 0; c < src.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = src.at(c, y0 + y, x0 + x);
  return out;
}

struct Tile {
  TileOffset offset;
  Raster raster;
};

inline std::vector<Tile> cut_tiles(const Raster& src, const TileGrid& grid) {
  if (src.width() != grid.source_width || src.height() != grid.source_height) {
    throw DimensionMismatch("cut_tiles: raster does not match the grid's source dimensions");
  }
  std::vector<Tile> tiles;
  tiles.reserve(grid.offsets.size());
  for (const auto& o : grid.offsets)
    tiles.push_back({o, crop(src, o.x, o.y, grid.tile_size, grid.tile_size)});
  return tiles;
}

/// Assembles tiles into a mosaic. Pixels covered by several tiles receive the
/// plain average of the contributions.
inline Raster stitch(std::span<const Tile> tiles, const TileGrid& grid) {
  if (tiles.empty()) throw CoverageError("stitch: no tiles supplied");
  const ChannelLayout layout = tiles.front().raster.layout();
  std::vector<bool> seen(grid.offsets.size(), false);
  Raster sum(grid.source_width, grid.source_height, layout);
  std::vector<int> count(sum.pixel_count(), 0);
  for (const auto& t : tiles) {
    const auto it = std::find(grid.offsets.begin(), grid.offsets.end(), t.offset);
    if (it == grid.offsets.end()) {
      throw CoverageError("stitch: tile at (" + std::to_string(t.offset.x) + "," +
                          std::to_string(t.offset.y) + ") is not part of the grid");
    }
    if (t.raster.width() != grid.tile_size || t.raster.height() != grid.tile_size ||
        t.raster.layout() != layout) {
      throw DimensionMismatch("stitch: tile shape does not match the grid");
    }
    seen[static_cast<std::size_t>(it - grid.offsets.begin())] = true;
    for (int c = 0; c < sum.channels(); ++c)
      for (int y = 0; y < grid.tile_size; ++y)
        for (int x = 0; x < grid.tile_size; ++x)
          sum.at(c, t.offset.y + y, t.offset.x + x) += t.raster.at(c, y, x);
    for (int y = 0; y < grid.tile_size; ++y)
      for (int x = 0; x < grid.tile_size; ++x)
        ++count[static_cast<std::size_t>(t.offset.y + y) * grid.source_width + t.offset.x + x];
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) {
      throw CoverageError("stitch: missing tile at (" + std::to_string(grid.offsets[i].x) + "," +
                          std::to_string(grid.offsets[i].y) + ")");
    }
  }
  for (int c = 0; c < sum.channels(); ++c) {
    auto p = sum.plane(c);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (count[i] == 0) throw CoverageError("stitch: grid leaves pixels uncovered");
      if (count[i] > 1) p[i] /= count[i];
    }
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Georeferencing
// ---------------------------------------------------------------------------

struct PixelCoord {
  double col = 0.0;
  double row = 0.0;
};

struct WorldCoord {
  double x = 0.0;
  double y = 0.0;
};

/// North-up affine pixel <-> world transform (no rotation terms).
class GeoTransform {
 public:
  GeoTransform(double origin_x, double origin_y, double pixel_w, double pixel_h)
      : origin_x_(origin_x), origin_y_(origin_y), pixel_w_(pixel_w), pixel_h_(pixel_h) {
    if (pixel_w == 0.0 || pixel_h == 0.0 || !std::isfinite(pixel_w) || !std::isfinite(pixel_h)) {
      throw InvalidArgument("GeoTransform: pixel size must be finite and non-zero");
    }
  }

  double origin_x() const noexcept { return origin_x_; }
  double origin_y() const noexcept { return origin_y_; }
  double pixel_w() const noexcept { return pixel_w_; }
  double pixel_h() const noexcept { return pixel_h_; }

  PixelCoord world_to_pixel(double x, double y) const noexcept {
    return {(x - origin_x_) / pixel_w_, (y - origin_y_) / pixel_h_};
  }
  WorldCoord pixel_to_world(double col, double row) const noexcept {
    return {origin_x_ + col * pixel_w_, origin_y_ + row * pixel_h_};
  }

  bool operator==(const GeoTransform&) const = default;

 private:
  double origin_x_;
  double origin_y_;
  double pixel_w_;
  double pixel_h_;
};

inline PixelCoord world_to_pixel(double x, double y, const GeoTransform& g) noexcept {
  return g.world_to_pixel(x, y);
}

inline WorldCoord pixel_to_world(double col, double row, const GeoTransform& g) noexcept {
  return g.pixel_to_world(col, row);
}

}  // namespace retroroof
