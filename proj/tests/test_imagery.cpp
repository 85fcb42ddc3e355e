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

#include <catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "retroroof/imagery.hpp"
#include "retroroof/raster_io.hpp"
#include "test_support.hpp"

using namespace retroroof;
using Catch::Approx;

namespace {

Raster rgb_pixel(double r, double g, double b) {
  Raster x(1, 1, ChannelLayout::Rgb);
  x.at(0, 0, 0) = r;
  x.at(1, 0, 0) = g;
  x.at(2, 0, 0) = b;
  return x;
}

// Mid-gray lightness evaluated straight from the sRGB transfer curve and the
// CIE L* formula: for a neutral input Y equals the linearized channel value.
double neutral_lightness(double srgb) {
  const double lin = srgb <= 0.04045 ? srgb / 12.92 : std::pow((srgb + 0.055) / 1.055, 2.4);
  const double f = lin > std::pow(6.0 / 29.0, 3) ? std::cbrt(lin) : lin / (3 * std::pow(6.0 / 29.0, 2)) + 4.0 / 29.0;
  return 116.0 * f - 16.0;
}

}  // namespace

TEST_CASE("rgb_to_lab maps black, white and mid-gray") {
  auto black = rgb_to_lab(rgb_pixel(0, 0, 0));
  CHECK(black.layout() == ChannelLayout::Lab);
  CHECK(black.at(0, 0, 0) == Approx(0.0).margin(1e-12));
  CHECK(black.at(1, 0, 0) == Approx(0.0).margin(1e-12));
  CHECK(black.at(2, 0, 0) == Approx(0.0).margin(1e-12));

  auto white = rgb_to_lab(rgb_pixel(1, 1, 1));
  CHECK(white.at(0, 0, 0) == Approx(100.0).margin(1e-9));
  CHECK(std::abs(white.at(1, 0, 0)) <= 1e-6);
  CHECK(std::abs(white.at(2, 0, 0)) <= 1e-6);

  const double oracle = neutral_lightness(0.5);
  CHECK(oracle == Approx(53.389).margin(1e-3));  // frozen oracle value
  auto gray = rgb_to_lab(rgb_pixel(0.5, 0.5, 0.5));
  CHECK(gray.at(0, 0, 0) == Approx(oracle).margin(1e-9));
  CHECK(std::abs(gray.at(1, 0, 0)) <= 1e-6);
  CHECK(std::abs(gray.at(2, 0, 0)) <= 1e-6);
}

TEST_CASE("lab_to_rgb inverts the conversion") {
  Raster lab(1, 1, ChannelLayout::Lab, 0.0);
  auto black = lab_to_rgb(lab);
  for (int c = 0; c < 3; ++c) CHECK(black.at(c, 0, 0) == Approx(0.0).margin(1e-12));
  lab.at(0, 0, 0) = 53.389;
  auto gray = lab_to_rgb(lab);
  for (int c = 0; c < 3; ++c) CHECK(gray.at(c, 0, 0) == Approx(0.5).margin(1e-3));
}

TEST_CASE("LAB roundtrip over 10000 random colors stays within 1e-3") {
  auto rgb = testing_support::random_raster(100, 100, ChannelLayout::Rgb, 7);
  auto back = lab_to_rgb(rgb_to_lab(rgb));
  CHECK(testing_support::max_abs_diff(rgb, back) <= 1e-3);
}

TEST_CASE("lab_to_rgb clips out-of-gamut colors") {
  Raster lab(1, 1, ChannelLayout::Lab);
  lab.at(0, 0, 0) = 50;
  lab.at(1, 0, 0) = 128;
  lab.at(2, 0, 0) = -128;
  auto rgb = lab_to_rgb(lab);
  for (double v : rgb.samples()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("color conversions reject the wrong channel layout") {
  Raster l(2, 2, ChannelLayout::Luminance);
  CHECK_THROWS_AS(rgb_to_lab(l), ChannelMismatch);
  CHECK_THROWS_AS(lab_to_rgb(l), ChannelMismatch);
  CHECK_THROWS_AS(rgb_to_lab(Raster(2, 2, ChannelLayout::Lab)), ChannelMismatch);
}

TEST_CASE("gray_to_luminance is a linear, monotone, endpoint-exact map") {
  Raster scan(256, 1, ChannelLayout::Luminance);
  for (int i = 0; i < 256; ++i) scan.at(0, 0, i) = i;
  auto l = gray_to_luminance(scan);
  CHECK(l.at(0, 0, 0) == 0.0);
  CHECK(l.at(0, 0, 255) == 100.0);
  CHECK(l.at(0, 0, 128) == Approx(50.196).margin(1e-3));
  for (int i = 1; i < 256; ++i) CHECK(l.at(0, 0, i) > l.at(0, 0, i - 1));
  CHECK_THROWS_AS(gray_to_luminance(Raster(2, 2, ChannelLayout::Rgb)), ChannelMismatch);
}

TEST_CASE("Raster rejects empty dimensions") {
  CHECK_THROWS_AS(Raster(0, 4, ChannelLayout::Rgb), InvalidArgument);
  Raster r(3, 2, ChannelLayout::Rgb);
  CHECK(r.samples().size() == 18u);
}

TEST_CASE("make_tile_grid offsets") {
  auto offsets = [](const TileGrid& g) {
    std::set<std::pair<int, int>> s;
    for (auto o : g.offsets) s.insert({o.x, o.y});
    return s;
  };
  CHECK(offsets(make_tile_grid(512, 512, 256, 0)) ==
        std::set<std::pair<int, int>>{{0, 0}, {256, 0}, {0, 256}, {256, 256}});
  CHECK(offsets(make_tile_grid(500, 500, 256, 0)) ==
        std::set<std::pair<int, int>>{{0, 0}, {244, 0}, {0, 244}, {244, 244}});
  CHECK(offsets(make_tile_grid(256, 256, 256, 0)) == std::set<std::pair<int, int>>{{0, 0}});
  CHECK_THROWS_AS(make_tile_grid(200, 500, 256, 0), TilingError);
  CHECK_THROWS_AS(make_tile_grid(512, 512, 256, 256), TilingError);
  CHECK_THROWS_AS(make_tile_grid(512, 512, 256, -1), TilingError);
}

TEST_CASE("tile grids cover every pixel and stay in bounds") {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int w = 1 + static_cast<int>(rng() % 97), h = 1 + static_cast<int>(rng() % 97);
    const int tile = 1 + static_cast<int>(rng() % std::min(w, h));
    const int overlap = static_cast<int>(rng() % tile);
    auto g = make_tile_grid(w, h, tile, overlap);
    std::vector<int> cover(static_cast<std::size_t>(w) * h, 0);
    for (auto o : g.offsets) {
      REQUIRE(o.x >= 0);
      REQUIRE(o.y >= 0);
      REQUIRE(o.x + tile <= w);
      REQUIRE(o.y + tile <= h);
      for (int y = o.y; y < o.y + tile; ++y)
        for (int x = o.x; x < o.x + tile; ++x) ++cover[static_cast<std::size_t>(y) * w + x];
    }
    for (int c : cover) REQUIRE(c >= 1);
  }
}

TEST_CASE("stitch reassembles and averages") {
  auto img = testing_support::random_raster(70, 50, ChannelLayout::Rgb, 11);
  auto g0 = make_tile_grid(70, 50, 20, 0);
  auto tiles = cut_tiles(img, g0);
  CHECK(stitch(tiles, g0) == img);

  auto g1 = make_tile_grid(70, 50, 20, 7);
  CHECK(testing_support::max_abs_diff(stitch(cut_tiles(img, g1), g1), img) <= 1e-12);

  Raster constant(70, 50, ChannelLayout::Luminance, 42.5);
  auto mosaic = stitch(cut_tiles(constant, g1), g1);
  for (double v : mosaic.samples()) CHECK(v == Approx(42.5).margin(1e-12));

  tiles.pop_back();
  CHECK_THROWS_AS(stitch(tiles, g0), CoverageError);
}

TEST_CASE("world_to_pixel and pixel_to_world") {
  GeoTransform g(100, 200, 0.5, -0.5);
  auto o = world_to_pixel(100, 200, g);
  CHECK(o.col == 0.0);
  CHECK(o.row == 0.0);
  auto p = world_to_pixel(101, 199, g);
  CHECK(p.col == Approx(2.0));
  CHECK(p.row == Approx(2.0));
  CHECK_THROWS_AS(GeoTransform(0, 0, 0.0, 1.0), InvalidArgument);
  CHECK_THROWS_AS(GeoTransform(0, 0, 1.0, 0.0), InvalidArgument);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1e5, 1e5);
  for (int i = 0; i < 1000; ++i) {
    GeoTransform t(u(rng), u(rng), 0.01 + std::abs(u(rng)) * 1e-4, -(0.01 + std::abs(u(rng)) * 1e-4));
    const double x = u(rng), y = u(rng);
    auto px = t.world_to_pixel(x, y);
    auto back = t.pixel_to_world(px.col, px.row);
    REQUIRE(std::abs(back.x - x) <= 1e-9 * std::max(1.0, std::abs(x)));
    REQUIRE(std::abs(back.y - y) <= 1e-9 * std::max(1.0, std::abs(y)));
  }
}

TEST_CASE("raster and world file I/O roundtrip") {
  auto dir = testing_support::scratch_dir("imagery_io");
  Raster rgb(8, 6, ChannelLayout::Rgb);
  for (std::size_t i = 0; i < rgb.samples().size(); ++i) rgb.samples()[i] = (i % 256) / 255.0;
  write_raster(dir / "a.png", rgb);
  auto back = read_raster(dir / "a.png");
  CHECK(back.layout() == ChannelLayout::Rgb);
  CHECK(testing_support::max_abs_diff(rgb, back) <= 0.5 / 255 + 1e-12);

  Raster scan(5, 4, ChannelLayout::Luminance);
  for (std::size_t i = 0; i < scan.samples().size(); ++i) scan.samples()[i] = 100.0 * i / 19.0;
  write_raster(dir / "g.tif", scan);
  auto raw = read_gray_scan(dir / "g.tif");
  CHECK(raw.at(0, 0, 0) == 0.0);
  CHECK(raw.at(0, 3, 4) == 255.0);

  GeoTransform g(500000.25, 3600000.5, 0.3, -0.3);
  write_world_file(dir / "g.tfw", g);
  auto g2 = read_world_file(dir / "g.tfw");
  CHECK(g2.origin_x() == g.origin_x());
  CHECK(g2.pixel_h() == g.pixel_h());
  std::ofstream(dir / "bad.tfw") << "1\n0.5\n0\n-1\n0\n0\n";
  CHECK_THROWS_AS(read_world_file(dir / "bad.tfw"), ValidationError);
  CHECK_THROWS_AS(read_raster(dir / "missing.png"), IoError);
}
