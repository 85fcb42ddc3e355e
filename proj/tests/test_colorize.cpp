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
#include <limits>
#include <random>

#include "retroroof/colorize.hpp"
#include "test_support.hpp"

using namespace retroroof;
using namespace retroroof::colorize;
using Catch::Approx;

namespace {

Raster luminance_of(const Raster& rgb) { return extract_luminance(rgb_to_lab(rgb)); }

std::vector<ColorPair> scene_pairs(int n, int size, std::uint64_t seed) {
  std::vector<ColorPair> pairs;
  for (int i = 0; i < n; ++i) {
    Raster c = testing_support::synthetic_scene(size, size, seed + i);
    pairs.push_back({luminance_of(c), c});
  }
  return pairs;
}

// Chroma is a fixed function of brightness: warm ramps.
std::vector<ColorPair> ramp_pairs(int n, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ColorPair> pairs;
  for (int i = 0; i < n; ++i) {
    Raster c(size, size, ChannelLayout::Rgb);
    const double fx = u(rng), fy = u(rng), off = 0.3 * u(rng);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double t = std::clamp(off + 0.6 * (fx * x + fy * y) / size, 0.0, 1.0);
        c.at(0, y, x) = t;
        c.at(1, y, x) = 0.7 * t;
        c.at(2, y, x) = 0.4 * t;
      }
    pairs.push_back({luminance_of(c), c});
  }
  return pairs;
}

}  // namespace

TEST_CASE("self_attention reference cases") {
  Eigen::MatrixXd v(1, 3);
  v << 0.3, -2.0, 7.0;
  Eigen::MatrixXd q1 = Eigen::MatrixXd::Constant(1, 2, 0.4), k1 = Eigen::MatrixXd::Constant(1, 2, -1.1);
  CHECK(self_attention(q1, k1, v) == v);

  Eigen::MatrixXd q(3, 2), k(4, 2), vv(4, 2);
  q << 1, 2, -3, 0.5, 0, 0;
  k.rowwise() = Eigen::RowVector2d(0.7, -0.2);
  vv << 1, 5, 2, 6, 3, 7, 6, 2;
  const auto out = self_attention(q, k, vv);
  for (int i = 0; i < 3; ++i) {
    CHECK(out(i, 0) == Approx(3.0).epsilon(1e-12));
    CHECK(out(i, 1) == Approx(5.0).epsilon(1e-12));
  }

  // scores [1/sqrt2, 0]; softmax weight of the first row is 1 / (1 + e^{-1/sqrt2}).
  const double w0 = 1.0 / (1.0 + std::exp(-1.0 / std::sqrt(2.0)));
  CHECK(w0 == Approx(0.6698).margin(1e-4));
  Eigen::MatrixXd qa(1, 2), ka(2, 2), va(2, 1);
  qa << 1, 0;
  ka << 1, 0, 0, 1;
  va << 1, 0;
  CHECK(self_attention(qa, ka, va)(0, 0) == Approx(w0).margin(1e-12));

  Eigen::MatrixXd bad = qa;
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(self_attention(bad, ka, va), NumericFault);
}

TEST_CASE("attention rows are convex combinations of V") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 9, dk = 1 + trial % 4, dv = 1 + trial % 3;
    Eigen::MatrixXd q(n, dk), k(n, dk), v(n, dv);
    for (auto* m : {&q, &k, &v})
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = g(rng);
    const auto fwd = nn::attention_forward<double>(q, k, v);
    for (int i = 0; i < n; ++i) {
      CHECK(fwd.weights.row(i).sum() == Approx(1.0).margin(1e-6));
      CHECK(fwd.weights.row(i).minCoeff() >= 0.0);
      for (int c = 0; c < dv; ++c) {
        CHECK(fwd.output(i, c) >= v.col(c).minCoeff() - 1e-12);
        CHECK(fwd.output(i, c) <= v.col(c).maxCoeff() + 1e-12);
      }
    }
  }
}

TEST_CASE("merge_luminance_chroma preserves luminance exactly") {
  const Raster rgb = testing_support::synthetic_scene(9, 7, 4);
  const Raster lab = rgb_to_lab(rgb);
  const Raster l = extract_luminance(lab);
  const Raster merged = merge_luminance_chroma(l, extract_chroma(lab));
  CHECK(merged == lab);
  CHECK(extract_luminance(merged) == l);

  ChromaMap zero{9, 7, std::vector<double>(63, 0.0), std::vector<double>(63, 0.0)};
  const Raster gray = lab_to_rgb(merge_luminance_chroma(l, zero));
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 9; ++x) {
      CHECK(gray.at(0, y, x) == Approx(gray.at(1, y, x)).margin(1e-9));
      CHECK(gray.at(1, y, x) == Approx(gray.at(2, y, x)).margin(1e-9));
    }
  ChromaMap wrong{8, 7, std::vector<double>(56, 0.0), std::vector<double>(56, 0.0)};
  CHECK_THROWS_AS(merge_luminance_chroma(l, wrong), DimensionMismatch);
}

TEST_CASE("generator_forward shape, zero init and determinism") {
  Colorizer model(ColorizerConfig::toy(), 3);
  Raster l = extract_luminance(rgb_to_lab(testing_support::synthetic_scene(37, 21, 2)));
  const ChromaMap ab = model.generator_forward(l);
  CHECK(ab.width == 37);
  CHECK(ab.height == 21);
  REQUIRE(ab.a.size() == 37u * 21u);
  for (std::size_t i = 0; i < ab.a.size(); ++i) {
    CHECK(ab.a[i] == 0.0);
    CHECK(ab.b[i] == 0.0);
  }
  // Perturb the head so the output is non-trivial, then check repeatability.
  for (auto& p : model.generator_params())
    if (p.name.rfind("gen.head", 0) == 0)
      for (std::size_t i = 0; i < p.size(); ++i) p.value[i] = 0.01f * static_cast<float>(i % 7) - 0.03f;
  const ChromaMap x1 = model.generator_forward(l), x2 = model.generator_forward(l);
  CHECK(x1.a == x2.a);
  CHECK(x1.b == x2.b);
  for (double a : x1.a) {
    CHECK(a >= -128.0);
    CHECK(a <= 128.0);
  }
  model.generator_params()[0].value[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(model.generator_forward(l), NumericFault);
  CHECK_THROWS_AS(model.generator_forward(Raster(16, 16, ChannelLayout::Rgb)), ChannelMismatch);
}

TEST_CASE("patch discriminator geometry") {
  ColorizerConfig full = ColorizerConfig::full();
  PatchDiscriminator d(full.discriminator, 1);
  CHECK(d.receptive_field() == 70);
  CHECK(d.output_dims(256, 256) == std::pair{30, 30});

  // Same stride plan at reduced width so the 256x256 pass is cheap.
  auto narrow = full.discriminator;
  narrow.base_width = 4;
  PatchDiscriminator dn(narrow, 1);
  const PatchMap m = dn.forward(nn::Tensor(3, 256, 256, 0.25f));
  CHECK(m.height == 30);
  CHECK(m.width == 30);

  Colorizer toy(ColorizerConfig::toy(), 5);
  CHECK(toy.discriminator().receptive_field() == 16);
  const Raster img = testing_support::synthetic_scene(32, 32, 8);
  const PatchMap p1 = toy.discriminator_forward(img), p2 = toy.discriminator_forward(img);
  CHECK(p1.height == 14);
  CHECK(p1.width == 14);
  CHECK(p1.p == p2.p);
  for (double p : p1.p) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
  CHECK_THROWS_AS(toy.discriminator_forward(testing_support::synthetic_scene(15, 40, 1)), DimensionMismatch);
}

TEST_CASE("gan_loss reference values") {
  const double eps = kProbEpsilon;
  CHECK(gan_loss(std::vector<double>{1 - eps}, std::vector<double>{eps}) == Approx(0.0).margin(1e-6));
  CHECK(gan_loss(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5}) == Approx(-1.3863).margin(1e-4));
  CHECK(gan_loss(std::vector<double>{0.8}, std::vector<double>{0.3}) == Approx(-0.5798).margin(1e-4));
  CHECK(gan_loss(PatchMap(2, 2, 1.0), PatchMap(2, 2, 0.0)) == Approx(2 * std::log(1 - eps)));
}

TEST_CASE("gan_loss is never positive") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-0.1, 1.1);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> r(1 + t % 5), f(1 + t % 3);
    for (auto& x : r) x = u(rng);
    for (auto& x : f) x = u(rng);
    REQUIRE(gan_loss(r, f) <= 0.0);
  }
}

TEST_CASE("l1_loss reference values") {
  Raster a(3, 2, ChannelLayout::Luminance, 1.0), b(3, 2, ChannelLayout::Luminance, 0.0);
  CHECK(l1_loss(a, a) == 0.0);
  CHECK(l1_loss(a, b) == 1.0);
  CHECK(l1_loss<double>(std::vector<double>{0, 2}, std::vector<double>{1, 1}) == 1.0);
  CHECK_THROWS_AS(l1_loss(a, Raster(2, 3, ChannelLayout::Luminance)), DimensionMismatch);
}

TEST_CASE("gan_loss and l1_loss gradients match central differences") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> prob(0.05, 0.95), val(-1.0, 1.0);
  const double h = 1e-5;
  auto rel = [](double a, double n) { return std::abs(a - n) / std::max(std::abs(n), 1e-12); };
  for (int t = 0; t < 50; ++t) {
    std::vector<double> real(6), fake(6);
    for (auto& x : real) x = prob(rng);
    for (auto& x : fake) x = prob(rng);
    const auto gf = gan_loss_grad_fake(fake);
    const auto gr = gan_loss_grad_real(real);
    const std::size_t i = static_cast<std::size_t>(t) % 6;
    auto fp = fake, fm = fake;
    fp[i] += h;
    fm[i] -= h;
    CHECK(rel(gf[i], (gan_loss(real, fp) - gan_loss(real, fm)) / (2 * h)) < 1e-4);
    auto rp = real, rm = real;
    rp[i] += h;
    rm[i] -= h;
    CHECK(rel(gr[i], (gan_loss(rp, fake) - gan_loss(rm, fake)) / (2 * h)) < 1e-4);

    std::vector<double> a(8), b(8);
    for (std::size_t j = 0; j < 8; ++j) {
      a[j] = val(rng);
      b[j] = a[j] + (j % 2 ? 1.0 : -1.0) * (0.01 + std::abs(val(rng)));
    }
    const auto g = l1_loss_grad<double>(a, b);
    const std::size_t j = static_cast<std::size_t>(t) % 8;
    auto bp = b, bm = b;
    bp[j] += h;
    bm[j] -= h;
    CHECK(rel(g[j], (l1_loss<double>(a, bp) - l1_loss<double>(a, bm)) / (2 * h)) < 1e-4);
  }
}

TEST_CASE("logit-space adversarial losses have exact gradients") {
  std::mt19937_64 rng(2);
  std::normal_distribution<float> g(0.f, 1.5f);
  std::vector<float> a(5), b(4);
  for (auto& x : a) x = g(rng);
  for (auto& x : b) x = g(rng);
  using Fn = LogitLoss (*)(std::span<const float>, std::span<const float>);
  for (Fn fn : {static_cast<Fn>(standard_d_loss), static_cast<Fn>(relativistic_loss)}) {
    const LogitLoss base = fn(a, b);
    const float h = 1e-2f;
    for (std::size_t i = 0; i < a.size(); ++i) {
      auto ap = a, am = a;
      ap[i] += h;
      am[i] -= h;
      CHECK(base.d_a[i] == Approx((fn(ap, b).value - fn(am, b).value) / (2 * h)).margin(1e-4));
    }
    for (std::size_t j = 0; j < b.size(); ++j) {
      auto bp = b, bm = b;
      bp[j] += h;
      bm[j] -= h;
      CHECK(base.d_b[j] == Approx((fn(a, bp).value - fn(a, bm).value) / (2 * h)).margin(1e-4));
    }
  }
  const LogitLoss gl = standard_g_loss(b);
  for (std::size_t j = 0; j < b.size(); ++j) {
    auto bp = b, bm = b;
    bp[j] += 1e-2f;
    bm[j] -= 1e-2f;
    CHECK(gl.d_b[j] == Approx((standard_g_loss(bp).value - standard_g_loss(bm).value) / 2e-2).margin(1e-4));
  }
}

TEST_CASE("colorize_image shape and luminance preservation") {
  Colorizer model(ColorizerConfig::toy(), 9);
  const Raster l = extract_luminance(rgb_to_lab(testing_support::synthetic_scene(50, 40, 3)));
  const Raster rgb = colorize_image(l, model, 32, 8);
  CHECK(rgb.width() == 50);
  CHECK(rgb.height() == 40);
  CHECK(rgb.layout() == ChannelLayout::Rgb);
  // Zero-chroma model renders gray.
  CHECK(testing_support::max_abs_diff(rgb, luminance_to_rgb(l)) <= 1e-9);
  CHECK_THROWS_AS(colorize_image(l, model, 64), TilingError);

  for (auto& p : model.generator_params())
    if (p.name.rfind("gen.head", 0) == 0)
      for (std::size_t i = 0; i < p.size(); ++i) p.value[i] = 0.02f * static_cast<float>(i % 5) - 0.04f;
  const Raster lab = colorize_lab(l, model, 32, 8);
  CHECK(extract_luminance(lab) == l);
  const Raster rgb2 = lab_to_rgb(lab);
  const Raster back = rgb_to_lab(rgb2);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 50; ++x) {
      bool clipped = false;
      for (int c = 0; c < 3; ++c) clipped |= rgb2.at(c, y, x) <= 0.0 || rgb2.at(c, y, x) >= 1.0;
      if (!clipped) CHECK(back.at(0, y, x) == Approx(l.at(0, y, x)).margin(1e-6));
    }
}

TEST_CASE("colorizer checkpoint roundtrip") {
  auto dir = testing_support::scratch_dir("colorizer_ckpt");
  Colorizer model(ColorizerConfig::toy(), 17);
  for (auto& p : model.generator_params())
    if (p.name.rfind("gen.head", 0) == 0) p.value.assign(p.size(), 0.01f);
  model.save(dir / "c.ckpt");
  const Colorizer loaded = Colorizer::load(dir / "c.ckpt");
  const Raster l = extract_luminance(rgb_to_lab(testing_support::synthetic_scene(32, 32, 1)));
  CHECK(loaded.generator_forward(l).a == model.generator_forward(l).a);
  CHECK(loaded.discriminator_forward(testing_support::synthetic_scene(32, 32, 1)).p ==
        model.discriminator_forward(testing_support::synthetic_scene(32, 32, 1)).p);
  CHECK(loaded.seed() == 17u);
}

TEST_CASE("train_colorizer lowers validation L1 on synthetic tiles") {
  const auto pairs = scene_pairs(64, 32, 100);
  ColorizerTrainConfig cfg;
  cfg.base.epochs = 5;
  cfg.base.seed = 1;
  const auto r = train_colorizer(pairs, cfg);
  REQUIRE(r.history.size() == 5u);
  INFO("initial " << r.initial_val_l1 << " final " << r.history.back().val_l1);
  CHECK(r.history.back().val_l1 < r.initial_val_l1);
}

TEST_CASE("pure L1 regression trends downward") {
  const auto pairs = ramp_pairs(32, 32, 5);
  ColorizerTrainConfig cfg;
  cfg.base.epochs = 6;
  cfg.lambda_adv = 0.0;
  const auto r = train_colorizer(pairs, cfg);
  std::vector<double> y;
  for (const auto& e : r.history) {
    CHECK(e.d_loss == 0.0);
    y.push_back(e.g_l1);
  }
  // Least-squares slope of the training-loss curve.
  const double n = static_cast<double>(y.size());
  double sx = 0, sy = 0, sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sx += i;
    sy += y[i];
    sxy += i * y[i];
    sxx += double(i) * i;
  }
  CHECK((n * sxy - sx * sy) / (n * sxx - sx * sx) < 0.0);
  CHECK(y.back() < y.front());
}

TEST_CASE("colorizer training is reproducible") {
  const auto pairs = scene_pairs(6, 32, 40);
  ColorizerTrainConfig cfg;
  cfg.base.epochs = 2;
  cfg.base.batch_size = 3;
  cfg.base.seed = 4;
  const auto r1 = train_colorizer(pairs, cfg);
  const auto r2 = train_colorizer(pairs, cfg);
  REQUIRE(r1.history.size() == r2.history.size());
  for (std::size_t i = 0; i < r1.history.size(); ++i) {
    CHECK(r1.history[i].d_loss == r2.history[i].d_loss);
    CHECK(r1.history[i].g_l1 == r2.history[i].g_l1);
    CHECK(r1.history[i].val_l1 == r2.history[i].val_l1);
  }
  for (std::size_t i = 0; i < r1.model.generator_params().size(); ++i)
    CHECK(r1.model.generator_params()[i].value == r2.model.generator_params()[i].value);
  cfg.relativistic = true;
  CHECK_NOTHROW(train_colorizer(pairs, cfg));
  CHECK_THROWS_AS(train_colorizer(std::span<const ColorPair>{}, cfg), InvalidArgument);
}
