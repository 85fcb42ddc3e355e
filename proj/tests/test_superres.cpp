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
#include <random>

#include "retroroof/superres.hpp"
#include "test_support.hpp"

using namespace retroroof;
using namespace retroroof::superres;
using Catch::Approx;
using testing_support::max_abs_diff;

namespace {

// Gives the zero-initialized output layer non-trivial weights so the residual
// branch contributes.
void perturb_output(SuperResolver& m) {
  for (auto& p : m.generator_params())
    if (p.name.rfind("sr.out", 0) == 0)
      for (std::size_t i = 0; i < p.size(); ++i) p.value[i] = 0.01f * static_cast<float>(i % 9) - 0.04f;
}

std::vector<Raster> textured_tiles(int n, int size, std::uint64_t seed) {
  std::vector<Raster> v;
  for (int i = 0; i < n; ++i) v.push_back(testing_support::textured_scene(size, size, seed + i));
  return v;
}

double bicubic_rec(std::span<const SRPair> val, int s) {
  double acc = 0.0;
  for (const auto& p : val) acc += sr_rec_loss(p.hr, testing_support::bicubic_upscale(p.lr, s));
  return acc / static_cast<double>(val.size());
}

}  // namespace

TEST_CASE("bicubic reference kernel sanity") {
  for (double f : {0.0, 0.25, 0.5, 0.8}) {
    double sum = 0.0;
    for (int m = -1; m <= 2; ++m) sum += testing_support::cubic_weight(f - m);
    CHECK(sum == Approx(1.0).margin(1e-12));
  }
  CHECK(testing_support::cubic_weight(0.0) == 1.0);
  CHECK(testing_support::cubic_weight(1.0) == 0.0);
  CHECK(testing_support::cubic_weight(2.0) == 0.0);
  // Linear ramps are reproduced away from the clamped border.
  Raster ramp(12, 12, ChannelLayout::Luminance);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x) ramp.at(0, y, x) = 0.05 * x + 0.02 * y;
  const Raster up = testing_support::bicubic_upscale(ramp, 2, -10, 10);
  for (int y = 6; y < 18; ++y)
    for (int x = 6; x < 18; ++x)
      CHECK(up.at(0, y, x) == Approx(0.05 * ((x + 0.5) / 2 - 0.5) + 0.02 * ((y + 0.5) / 2 - 0.5)).margin(1e-12));
}

TEST_CASE("sr_forward output dims are exactly s times the input") {
  const Raster img = testing_support::textured_scene(64, 64, 1);
  for (int s : {2, 4}) {
    SRConfig c;
    c.scale = s;
    SuperResolver m(c, 2);
    const Raster out = m.sr_forward(img);
    CHECK(out.width() == 64 * s);
    CHECK(out.height() == 64 * s);
    CHECK(out.layout() == ChannelLayout::Rgb);
    const Raster odd = m.sr_forward(testing_support::textured_scene(13, 7, 3));
    CHECK(odd.width() == 13 * s);
    CHECK(odd.height() == 7 * s);
  }
  CHECK_THROWS_AS(SuperResolver(SRConfig{3, 3}, 0), InvalidArgument);
}

TEST_CASE("untrained generator is the nearest-neighbour upscaler") {
  SuperResolver m(SRConfig{}, 5);
  const Raster img = testing_support::textured_scene(20, 16, 4);
  CHECK(max_abs_diff(m.sr_forward(img), nearest_upscale(img, 4)) <= 1e-5);

  SRConfig gray;
  gray.channels = 1;
  gray.discriminator.in_channels = 1;
  SuperResolver g(gray, 5);
  const Raster l = extract_luminance(rgb_to_lab(img));
  CHECK(max_abs_diff(g.sr_forward(l), nearest_upscale(l, 4)) <= 1e-3);
  CHECK_THROWS_AS(m.sr_forward(l), ChannelMismatch);
}

TEST_CASE("sr_forward is deterministic") {
  SuperResolver m(SRConfig{}, 6);
  perturb_output(m);
  const Raster img = testing_support::textured_scene(16, 16, 2);
  CHECK(m.sr_forward(img) == m.sr_forward(img));
}

TEST_CASE("degrade shape, purity and determinism") {
  const Raster hr = testing_support::textured_scene(256, 256, 3);
  DegradationConfig cfg;
  cfg.seed = 9;
  const Raster lr = degrade(hr, cfg);
  CHECK(lr.width() == 64);
  CHECK(lr.height() == 64);
  CHECK(degrade(hr, cfg) == lr);
  cfg.seed = 10;
  CHECK_FALSE(degrade(hr, cfg) == lr);
  for (double v : lr.samples()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  DegradationConfig clean{2, 0.0, 0.0, 0.0, 0.0, 1};
  const Raster small = testing_support::random_raster(6, 4, ChannelLayout::Rgb, 8);
  const Raster down = degrade(small, clean);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 3; ++x) {
        const double mean = (small.at(c, 2 * y, 2 * x) + small.at(c, 2 * y, 2 * x + 1) +
                             small.at(c, 2 * y + 1, 2 * x) + small.at(c, 2 * y + 1, 2 * x + 1)) / 4.0;
        CHECK(down.at(c, y, x) == Approx(mean).margin(1e-15));
      }

  Raster constant(32, 32, ChannelLayout::Rgb, 0.37);
  const Raster flat = degrade(constant, clean);
  for (double v : flat.samples()) CHECK(v == Approx(0.37).margin(1e-15));
  DegradationConfig blurred{4, 1.5, 1.5, 0.0, 0.0, 1};
  const Raster flat_blurred = degrade(constant, blurred);
  for (double v : flat_blurred.samples()) CHECK(v == Approx(0.37).margin(1e-12));

  CHECK_THROWS_AS(degrade(testing_support::textured_scene(30, 32, 1), cfg), DimensionMismatch);
  CHECK_THROWS_AS(degrade(hr, DegradationConfig{4, -1.0, 1.0, 0.0, 0.0, 0}), InvalidArgument);
}

TEST_CASE("sr_gan_loss reference values") {
  const double eps = kProbEpsilon;
  CHECK(sr_gan_loss(PatchMap(2, 2, 1 - eps), PatchMap(2, 2, eps)) == Approx(0.0).margin(1e-6));
  CHECK(sr_gan_loss(PatchMap(3, 3, 0.5), PatchMap(3, 3, 0.5)) == Approx(-1.3863).margin(1e-4));
  CHECK(sr_gan_loss(PatchMap(1, 2, 0.9), PatchMap(2, 1, 0.1)) == Approx(-0.2107).margin(1e-4));
}

TEST_CASE("sr_rec_loss values, bound and gradient") {
  Raster one(4, 4, ChannelLayout::Rgb, 1.0), zero(4, 4, ChannelLayout::Rgb, 0.0);
  CHECK(sr_rec_loss(one, one) == 0.0);
  CHECK(sr_rec_loss(one, zero) == 1.0);
  CHECK_THROWS_AS(sr_rec_loss(one, Raster(4, 5, ChannelLayout::Rgb)), DimensionMismatch);

  for (int t = 0; t < 200; ++t) {
    const Raster a = testing_support::random_raster(3, 3, ChannelLayout::Rgb, 3 * t);
    const Raster b = testing_support::random_raster(3, 3, ChannelLayout::Rgb, 3 * t + 1);
    const Raster c = testing_support::random_raster(3, 3, ChannelLayout::Rgb, 3 * t + 2);
    REQUIRE(sr_rec_loss(a, c) <= sr_rec_loss(a, b) + sr_rec_loss(b, c) + 1e-15);
    REQUIRE(sr_rec_loss(a, b) > 0.0);
  }

  const Raster hr = testing_support::random_raster(5, 4, ChannelLayout::Rgb, 77);
  Raster sr = testing_support::random_raster(5, 4, ChannelLayout::Rgb, 78);
  const auto g = sr_rec_loss_grad(hr, sr);
  const double n = static_cast<double>(sr.samples().size());
  const double h = 1e-5;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double d = sr.samples()[i] - hr.samples()[i];
    if (std::abs(d) < 1e-3) continue;
    CHECK(std::abs(g[i]) == Approx(1.0 / n).epsilon(1e-12));
    const double keep = sr.samples()[i];
    sr.samples()[i] = keep + h;
    const double up = sr_rec_loss(hr, sr);
    sr.samples()[i] = keep - h;
    const double down = sr_rec_loss(hr, sr);
    sr.samples()[i] = keep;
    CHECK(std::abs(g[i] - (up - down) / (2 * h)) / std::abs(g[i]) < 1e-4);
  }
}

TEST_CASE("upscale_image dims and tiled/untiled agreement") {
  SuperResolver m(SRConfig{}, 8);
  const Raster big(500, 500, ChannelLayout::Rgb, 0.42);
  const Raster up = upscale_image(big, m, 128);
  CHECK(up.width() == 2000);
  CHECK(up.height() == 2000);
  for (double v : up.samples()) REQUIRE(v == Approx(0.42).margin(1e-3));

  perturb_output(m);
  const Raster img = testing_support::textured_scene(128, 128, 12);
  const Raster whole = m.sr_forward(img);
  const Raster tiled = upscale_image(img, m, 48);
  CHECK(max_abs_diff(whole, nearest_upscale(img, 4)) > 1e-3);
  // The context halo makes every pixel agree, seam bands included.
  CHECK(max_abs_diff(whole, tiled) <= 1e-4);
  CHECK_THROWS_AS(upscale_image(img, m, 200), TilingError);
}

TEST_CASE("super-resolver checkpoint roundtrip") {
  auto dir = testing_support::scratch_dir("sr_ckpt");
  SRConfig c;
  c.scale = 2;
  SuperResolver m(c, 21);
  perturb_output(m);
  m.save(dir / "sr.ckpt");
  const SuperResolver back = SuperResolver::load(dir / "sr.ckpt");
  CHECK(back.scale() == 2);
  const Raster img = testing_support::textured_scene(16, 16, 1);
  CHECK(back.sr_forward(img) == m.sr_forward(img));
  CHECK_THROWS_AS(back.discriminator_forward(Raster(8, 8, ChannelLayout::Rgb)), DimensionMismatch);
}

TEST_CASE("train_sr beats the bicubic baseline on held-out tiles") {
  const auto tiles = textured_tiles(64, 64, 900);
  DegradationConfig deg;
  deg.seed = 3;
  SRTrainConfig cfg;
  cfg.base.epochs = 5;
  const auto r = train_sr(tiles, deg, cfg);
  REQUIRE(r.history.size() == 5u);
  REQUIRE(r.validation.size() == 8u);
  const double bicubic = bicubic_rec(r.validation, 4);
  INFO("nearest " << r.initial_val_rec << " bicubic " << bicubic << " trained " << r.history.back().val_rec);
  CHECK(r.history.back().val_rec < bicubic);
}

TEST_CASE("pure reconstruction training trends downward and is reproducible") {
  const auto tiles = textured_tiles(16, 32, 40);
  DegradationConfig deg;
  deg.scale = 2;
  SRTrainConfig cfg;
  cfg.base.epochs = 4;
  cfg.lambda_adv = 0.0;
  const auto r1 = train_sr(tiles, deg, cfg);
  CHECK(r1.history.back().val_rec < r1.initial_val_rec);
  CHECK(r1.history.back().g_rec < r1.history.front().g_rec);
  for (const auto& e : r1.history) CHECK(e.d_loss == 0.0);

  cfg.lambda_adv = 0.1;
  cfg.base.epochs = 2;
  const auto a = train_sr(tiles, deg, cfg);
  const auto b = train_sr(tiles, deg, cfg);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].d_loss == b.history[i].d_loss);
    CHECK(a.history[i].g_rec == b.history[i].g_rec);
    CHECK(a.history[i].val_rec == b.history[i].val_rec);
  }
  CHECK_THROWS_AS(train_sr(std::span<const Raster>{}, deg, cfg), InvalidArgument);
}
