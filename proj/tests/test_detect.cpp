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

#include "retroroof/detect.hpp"
#include "retroroof/pipeline/synthetic.hpp"
#include "test_support.hpp"

using namespace retroroof;
using namespace retroroof::detect;
using annotations::GroundTruthBox;
using Catch::Approx;

namespace {

GroundTruthBox gt_box(double x, double y, double w, double h, int cat = 1) {
  return {x, y, w, h, cat, annotations::BoxSource::Auto};
}

BoxPrediction pred(double cx, double cy, double w, double h, double obj, std::vector<double> cls = {1.0}) {
  return {{cx, cy, w, h}, obj, std::move(cls)};
}

// Distance from any pair of parallel edges or the overlap boundary, so finite
// differences never straddle a kink of min/max.
bool clear_of_kinks(const CenterBox& a, const CenterBox& b, double margin) {
  const double ax[2] = {a.cx - a.w / 2, a.cx + a.w / 2}, bx[2] = {b.cx - b.w / 2, b.cx + b.w / 2};
  const double ay[2] = {a.cy - a.h / 2, a.cy + a.h / 2}, by[2] = {b.cy - b.h / 2, b.cy + b.h / 2};
  for (double u : ax)
    for (double v : bx)
      if (std::abs(u - v) < margin) return false;
  for (double u : ay)
    for (double v : by)
      if (std::abs(u - v) < margin) return false;
  return true;
}

std::array<nn::Tensor, 3> random_maps(const HeadGeometry& g, int channels, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.f, 1.f);
  std::array<nn::Tensor, 3> m;
  for (int l = 0; l < 3; ++l) {
    m[l] = nn::Tensor(channels, g.levels[l].rows, g.levels[l].cols);
    for (auto& v : m[l].v) v = n(rng);
  }
  return m;
}

}  // namespace

TEST_CASE("CIoU fixtures", "[detect][loss]") {
  CHECK(ciou_loss({0, 0, 2, 2}, {0, 0, 2, 2}) == Approx(0.0).margin(1e-12));
  CHECK(ciou_loss({0, 0, 2, 2}, {0, 0, 4, 4}) == Approx(0.75).margin(1e-6));
  CHECK(ciou_loss({0, 0, 2, 2}, {10, 0, 2, 2}) == Approx(1.0 + 100.0 / 148.0).margin(1e-12));
  CHECK(ciou_loss({0, 0, 2, 2}, {10, 0, 2, 2}) == Approx(1.6757).margin(1e-4));
  CHECK_THROWS_AS(ciou_loss({0, 0, 0, 2}, {0, 0, 2, 2}), InvalidArgument);
  CHECK_THROWS_AS(ciou_loss({0, 0, 2, 2}, {0, 0, 2, -1}), InvalidArgument);
}

TEST_CASE("CIoU is symmetric, bounded and at least 1 - IoU", "[detect][loss][property]") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> c(-20, 20), s(0.5, 15);
  for (int i = 0; i < 2000; ++i) {
    const CenterBox a{c(rng), c(rng), s(rng), s(rng)}, b{c(rng), c(rng), s(rng), s(rng)};
    const auto r = ciou(a, b);
    REQUIRE(r.loss == Approx(ciou_loss(b, a)).margin(1e-12));
    REQUIRE(r.loss >= 1.0 - r.iou - 1e-12);
    REQUIRE(r.loss >= 0.0);
    REQUIRE(r.loss < 3.0);
  }
}

TEST_CASE("CIoU gradient matches central differences", "[detect][loss][gradient]") {
  std::mt19937_64 rng(100);
  std::uniform_real_distribution<double> c(-6, 6), s(1, 10);
  const double h = 1e-5;
  int checked = 0;
  while (checked < 100) {
    const CenterBox b{c(rng), c(rng), s(rng), s(rng)}, p{c(rng), c(rng), s(rng), s(rng)};
    if (!clear_of_kinks(b, p, 1e-3)) continue;
    const auto an = ciou(b, p).grad;
    double num_sq = 0, diff_sq = 0, an_sq = 0;
    for (int k = 0; k < 4; ++k) {
      CenterBox lo = p, hi = p;
      double* fl[4] = {&lo.cx, &lo.cy, &lo.w, &lo.h};
      double* fh[4] = {&hi.cx, &hi.cy, &hi.w, &hi.h};
      *fl[k] -= h;
      *fh[k] += h;
      const double num = (ciou_loss(b, hi) - ciou_loss(b, lo)) / (2 * h);
      num_sq += num * num;
      an_sq += an[k] * an[k];
      diff_sq += (num - an[k]) * (num - an[k]);
    }
    const double rel = std::sqrt(diff_sq) / std::max({std::sqrt(num_sq), std::sqrt(an_sq), 1e-12});
    INFO("pair " << checked << " rel " << rel);
    REQUIRE(rel < 1e-4);
    ++checked;
  }
}

TEST_CASE("box, objectness and classification loss examples", "[detect][loss]") {
  auto a = TargetAssignment::empty(3);
  a.positive = {1, 0, 1};
  a.target[0] = {0, 0, 2, 2};
  a.target[2] = {0, 0, 2, 2};
  a.label = {0, -1, 0};
  const std::vector<BoxPrediction> exact = {pred(0, 0, 2, 2, 0.5), pred(5, 5, 1, 1, 0.5), pred(0, 0, 2, 2, 0.5)};
  CHECK(box_loss(a, exact) == Approx(0.0).margin(1e-12));

  const std::vector<BoxPrediction> two = {pred(0, 0, 4, 4, 0.5), pred(5, 5, 1, 1, 0.5), pred(10, 0, 2, 2, 0.5)};
  CHECK(box_loss(a, two) == Approx(1.2129).margin(1e-4));
  CHECK(box_loss(TargetAssignment::empty(3), two) == 0.0);

  // objectness
  auto b = TargetAssignment::empty(2);
  b.positive = {1, 0};
  b.label = {0, -1};
  b.target[0] = {0, 0, 1, 1};
  CHECK(objectness_loss(b, std::vector<BoxPrediction>{pred(0, 0, 1, 1, 0.5), pred(0, 0, 1, 1, 0.5)}) ==
        Approx(std::log(2.0)).margin(1e-4));
  CHECK(objectness_loss(b, std::vector<BoxPrediction>{pred(0, 0, 1, 1, 1.0), pred(0, 0, 1, 1, 0.0)}) <
        1e-6);

  // classification
  CHECK(classification_loss(a, exact) == 0.0);
  auto c = TargetAssignment::empty(1);
  c.positive = {1};
  c.label = {1};
  c.target[0] = {0, 0, 1, 1};
  CHECK(classification_loss(c, std::vector<BoxPrediction>{pred(0, 0, 1, 1, 0.5, {0.5, 0.5})}) ==
        Approx(0.6931).margin(1e-4));
  CHECK(classification_loss(TargetAssignment::empty(1), std::vector<BoxPrediction>{pred(0, 0, 1, 1, 0.5)}) ==
        0.0);
  CHECK_THROWS_AS(box_loss(a, std::vector<BoxPrediction>{exact[0]}), DimensionMismatch);
}

TEST_CASE("objectness and classification are slot-permutation invariant", "[detect][loss][property]") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 12;
    auto a = TargetAssignment::empty(n);
    std::vector<BoxPrediction> p;
    for (std::size_t i = 0; i < n; ++i) {
      const double q = u(rng);
      p.push_back(pred(0, 0, 1, 1, u(rng), {q, 1 - q}));
      if (u(rng) < 0.3) {
        a.positive[i] = 1;
        a.label[i] = u(rng) < 0.5 ? 0 : 1;
        a.target[i] = {0, 0, 1, 1};
      }
    }
    const double lo = objectness_loss(a, p), lc = classification_loss(a, p);
    REQUIRE(lo >= 0);
    REQUIRE(lc >= 0);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto a2 = TargetAssignment::empty(n);
    std::vector<BoxPrediction> p2;
    for (std::size_t i = 0; i < n; ++i) {
      a2.positive[i] = a.positive[perm[i]];
      a2.label[i] = a.label[perm[i]];
      a2.target[i] = a.target[perm[i]];
      p2.push_back(p[perm[i]]);
    }
    REQUIRE(objectness_loss(a2, p2) == Approx(lo).margin(1e-12));
    REQUIRE(classification_loss(a2, p2) == Approx(lc).margin(1e-12));
  }
}

TEST_CASE("total loss", "[detect][loss]") {
  CHECK(total_loss(LossWeights{}, 0, 0, 0) == 0.0);
  CHECK(total_loss(LossWeights::unit(), 0.5, 0.2, 0.3) == Approx(1.0).margin(1e-12));
  CHECK(total_loss(LossWeights{}, 0.1, 0.2, 0.4) == Approx(1.15).margin(1e-12));
  const LossWeights d;
  CHECK((d.box == 7.5 && d.obj == 1.0 && d.cls == 0.5));

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int i = 0; i < 200; ++i) {
    const double lb = u(rng), lo = u(rng), lc = u(rng), k = u(rng);
    const LossWeights w{u(rng), u(rng), u(rng)};
    const LossWeights w2{w.box * k, w.obj, w.cls};
    REQUIRE(total_loss(w2, lb, lo, lc) - total_loss(w, lb, lo, lc) == Approx((k - 1) * w.box * lb).margin(1e-12));
  }
}

TEST_CASE("assign_targets", "[detect][assign]") {
  const int s16[] = {16};
  const auto g = make_head_geometry(128, 128, s16);
  REQUIRE(g.slot_count() == 64);

  const std::vector<GroundTruthBox> one = {gt_box(72, 40, 16, 16)};  // center (80, 48)
  auto a = assign_targets(one, g);
  REQUIRE(a.num_positive() == 1);
  CHECK(a.positive[g.slot(0, 3, 5)] == 1);
  CHECK(a.target[g.slot(0, 3, 5)] == CenterBox{80, 48, 16, 16});
  CHECK(a.label[g.slot(0, 3, 5)] == 0);

  CHECK(assign_targets(std::vector<GroundTruthBox>{}, g).num_positive() == 0);

  const std::vector<GroundTruthBox> two = {gt_box(0, 0, 10, 10), gt_box(60, 60, 10, 10)};
  a = assign_targets(two, g);
  CHECK(a.num_positive() == 2);
  CHECK(a.positive[g.slot(0, 0, 0)] == 1);
  CHECK(a.positive[g.slot(0, 4, 4)] == 1);

  CHECK_THROWS_AS(assign_targets(std::vector<GroundTruthBox>{gt_box(120, 120, 20, 20)}, g), InvalidArgument);
  CHECK_THROWS_AS(assign_targets(std::vector<GroundTruthBox>{gt_box(0, 0, 4, 4, 2)}, g), InvalidArgument);

  const int s3[] = {8, 16, 32};
  const auto g3 = make_head_geometry(256, 256, s3);
  CHECK(g3.slot_count() == 1344);
  // level choice: 16 px boxes go to stride 8, 64 px to stride 32
  a = assign_targets(std::vector<GroundTruthBox>{gt_box(8, 8, 16, 16)}, g3);
  CHECK(a.positive[g3.slot(0, 2, 2)] == 1);
  a = assign_targets(std::vector<GroundTruthBox>{gt_box(96, 96, 64, 64)}, g3);
  CHECK(a.positive[g3.slot(2, 4, 4)] == 1);
  // same center and size: the second falls back to another level
  a = assign_targets(std::vector<GroundTruthBox>{gt_box(8, 8, 16, 16), gt_box(9, 9, 14, 14)}, g3);
  CHECK(a.num_positive() == 2);
  CHECK(a.unassigned == 0);
  CHECK_THROWS_AS(make_head_geometry(100, 64, s3), DimensionMismatch);
}

TEST_CASE("distinct-cell ground truths give one positive each", "[detect][assign][property]") {
  const auto g = make_head_geometry(64, 64, kStrides);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<GroundTruthBox> gts;
    std::set<std::pair<int, int>> cells;
    const int n = 1 + static_cast<int>(u(rng) * 5);
    for (int i = 0; i < n; ++i) {
      const double cx = 1 + 62 * u(rng), cy = 1 + 62 * u(rng), w = 2 + 20 * u(rng), h = 2 + 20 * u(rng);
      const auto box = gt_box(cx - w / 2, cy - h / 2, w, h);
      // distinct at every level: distinct coarsest (stride 32) cells
      if (!cells.insert({static_cast<int>(cx / 32), static_cast<int>(cy / 32)}).second) continue;
      gts.push_back(box);
    }
    const auto a = assign_targets(gts, g);
    REQUIRE(a.num_positive() == gts.size());
    REQUIRE(a.unassigned == 0);
    for (std::size_t i = 0; i < a.num_slots(); ++i)
      if (a.positive[i]) REQUIRE(a.label[i] == 0);
  }
}

TEST_CASE("nms examples and properties", "[detect][nms]") {
  const std::vector<BoxPrediction> single = {pred(5, 5, 4, 4, 0.9)};
  REQUIRE(nms(single, 0.5, 0.25).size() == 1);

  const std::vector<BoxPrediction> dup = {pred(5, 5, 4, 4, 0.8), pred(5, 5, 4, 4, 0.9)};
  const auto k = nms(dup, 0.5, 0.0);
  REQUIRE(k.size() == 1);
  CHECK(k[0].objectness == 0.9);

  const std::vector<BoxPrediction> apart = {pred(5, 5, 4, 4, 0.6), pred(50, 50, 4, 4, 0.9)};
  const auto k2 = nms(apart, 0.5, 0.0);
  REQUIRE(k2.size() == 2);
  CHECK(k2[0].objectness == 0.9);
  CHECK(k2[1].objectness == 0.6);

  // ties keep input order
  const std::vector<BoxPrediction> tie = {pred(5, 5, 4, 4, 0.7), pred(5.5, 5, 4, 4, 0.7)};
  CHECK(nms(tie, 0.5, 0.0)[0].box.cx == 5.0);

  CHECK(nms(single, 0.5, 1.0).empty());
  CHECK_THROWS_AS(nms(single, 1.5, 0.1), InvalidArgument);

  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<BoxPrediction> ps;
    for (int i = 0; i < 30; ++i) ps.push_back(pred(40 * u(rng), 40 * u(rng), 2 + 10 * u(rng), 2 + 10 * u(rng), u(rng)));
    const double thr = 0.2 + 0.6 * u(rng);
    const auto out = nms(ps, thr, 0.1);
    for (std::size_t i = 0; i < out.size(); ++i) {
      REQUIRE(out[i].score() >= 0.1);
      if (i) REQUIRE(out[i - 1].score() >= out[i].score());
      REQUIRE(std::any_of(ps.begin(), ps.end(),
                          [&](const BoxPrediction& p) { return p.box == out[i].box && p.objectness == out[i].objectness; }));
      for (std::size_t j = 0; j < i; ++j) REQUIRE(center_iou(out[i].box, out[j].box) <= thr);
    }
    REQUIRE(nms(ps, thr, 0.1).size() == out.size());
  }
}

TEST_CASE("detector forward contracts", "[detect][model]") {
  const Detector m({}, 3);
  const auto img = testing_support::random_raster(256, 256, ChannelLayout::Rgb, 1, 0.0, 1.0);
  const auto a = detector_forward(img, m);
  REQUIRE(a.size() == 1344);
  for (const auto& p : a) {
    REQUIRE(p.objectness == 0.5);
    REQUIRE(p.box.w > 0);
    REQUIRE(p.box.h > 0);
    REQUIRE(std::accumulate(p.class_probs.begin(), p.class_probs.end(), 0.0) == Approx(1.0).margin(1e-6));
  }
  const auto b = detector_forward(img, m);
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i].box == b[i].box);

  // indivisible dims are padded and outputs clipped back
  Detector m2({2, 8, 1}, 4);
  for (auto& p : m2.params()) {
    if (p.name.find(".out.") == std::string::npos) continue;
    for (std::size_t i = 0; i < p.size(); ++i) p.value[i] = 0.05f * static_cast<float>(i % 7) - 0.15f;
  }
  const auto odd = testing_support::random_raster(70, 50, ChannelLayout::Rgb, 2, 0.0, 1.0);
  CHECK(detector_forward(odd, m2).size() == static_cast<std::size_t>(12 * 8 + 6 * 4 + 3 * 2));
  const auto dets = predict(odd, m2, 0.0);
  REQUIRE_FALSE(dets.empty());
  for (const auto& d : dets) {
    REQUIRE(d.w > 0);
    REQUIRE(d.h > 0);
    REQUIRE(d.x >= 0);
    REQUIRE(d.y >= 0);
    REQUIRE(d.x + d.w <= 70 + 1e-9);
    REQUIRE(d.y + d.h <= 50 + 1e-9);
    REQUIRE((d.class_id == 1 || d.class_id == 2));
  }
  std::size_t prev = dets.size();
  for (double c : {0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 1.0}) {
    const auto n = predict(odd, m2, c).size();
    REQUIRE(n <= prev);
    prev = n;
  }

  const Raster blank(64, 64, ChannelLayout::Rgb, 0.0);
  CHECK(predict(blank, Detector({}, 9), 1.0).empty());
  CHECK_THROWS_AS(Detector({0, 16, 1}, 0), InvalidArgument);
}

TEST_CASE("head loss gradient matches central differences", "[detect][gradient]") {
  const Detector m({2, 8, 1}, 1);
  const auto g = m.geometry(64, 64);
  std::mt19937_64 rng(21);
  auto maps = random_maps(g, m.outputs_per_slot(), rng);
  const std::vector<GroundTruthBox> gts = {gt_box(3, 4, 12, 9, 1), gt_box(30, 20, 20, 26, 2),
                                           gt_box(40, 44, 7, 15, 2)};
  const auto a = assign_targets(gts, g, 2);
  const LossWeights w{};
  std::array<nn::Tensor, 3> grads;
  head_loss(m, maps, g, a, w, &grads);
  const float h = 1e-2f;
  int checked = 0;
  for (int l = 0; l < 3; ++l)
    for (std::size_t i = 0; i < maps[l].size(); ++i) {
      const float keep = maps[l].v[i];
      maps[l].v[i] = keep + h;
      const double up = head_loss(m, maps, g, a, w).total;
      maps[l].v[i] = keep - h;
      const double dn = head_loss(m, maps, g, a, w).total;
      maps[l].v[i] = keep;
      const double num = (up - dn) / (2.0 * h);
      REQUIRE(grads[l].v[i] == Approx(num).margin(2e-4).epsilon(2e-3));
      ++checked;
    }
  CHECK(checked == (64 + 16 + 4) * 7);
}

TEST_CASE("augmentation keeps boxes on their content", "[detect][augment]") {
  nn::Tensor img(3, 64, 64, 0.f);
  const std::vector<GroundTruthBox> boxes = {gt_box(5, 9, 12, 7), gt_box(40, 30, 9, 20)};
  for (const auto& b : boxes)
    for (int y = int(b.y); y < int(b.y + b.h); ++y)
      for (int x = int(b.x); x < int(b.x + b.w); ++x)
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = 1.f;
  AugmentConfig cfg = AugmentConfig::none();
  cfg.rotate90 = true;
  cfg.flip = true;
  nn::Rng rng(5);
  for (int trial = 0; trial < 32; ++trial) {
    const auto a = augment(img, boxes, cfg, rng);
    REQUIRE(a.boxes.size() == 2);
    double inside = 0;
    for (const auto& b : a.boxes)
      for (int y = int(b.y); y < int(b.y + b.h); ++y)
        for (int x = int(b.x); x < int(b.x + b.w); ++x) inside += a.image.at(0, y, x);
    const double total = std::accumulate(a.image.v.begin(), a.image.v.end(), 0.0) / 3.0;
    REQUIRE(inside == total);
    REQUIRE(inside == 12 * 7 + 9 * 20);
  }
  cfg = AugmentConfig::none();
  cfg.scale_min = cfg.scale_max = 2.0;
  const auto z = augment(img, boxes, cfg, rng);
  // zoom x2 about (32, 32): box 1 keeps 2x14 of 24x14 and is dropped; box 2
  // maps to (48, 28, 18, 40), clipped at 64
  REQUIRE(z.boxes.size() == 1);
  CHECK(z.boxes[0].x == Approx(48));
  CHECK(z.boxes[0].y == Approx(28));
  CHECK(z.boxes[0].w == Approx(16));
  CHECK(z.boxes[0].h == Approx(36));
  CHECK(z.image.at(0, 40, 55) == 1.f);
}

TEST_CASE("training defaults and determinism", "[detect][train]") {
  const DetectorTrainConfig d;
  CHECK(d.base.learning_rate == 1e-3);
  CHECK(d.base.batch_size == 16);
  CHECK(d.base.epochs == 100);
  CHECK(d.patience == 10);

  pipeline::SceneConfig sc;
  std::vector<DetectionSample> samples;
  for (const auto& s : pipeline::render_benchmark(sc, 24, 3)) samples.push_back({s.image, s.boxes});
  DetectorTrainConfig cfg;
  cfg.base.epochs = 2;
  cfg.base.seed = 17;
  const auto r1 = train_detector(samples, {}, cfg);
  const auto r2 = train_detector(samples, {}, cfg);
  REQUIRE(r1.history.size() == 2);
  CHECK(r1.history[0].loss.total == r2.history[0].loss.total);
  CHECK(r1.history[1].loss.total == r2.history[1].loss.total);
  CHECK(r1.history[1].loss.total < r1.history[0].loss.total);

  const auto dir = testing_support::scratch_dir("detector_ckpt");
  r1.model.save(dir / "d.ckpt");
  const auto back = Detector::load(dir / "d.ckpt");
  const auto p1 = detector_forward(samples[0].image, r1.model), p2 = detector_forward(samples[0].image, back);
  for (std::size_t i = 0; i < p1.size(); ++i) REQUIRE(p1[i].box == p2[i].box);
  CHECK_THROWS_AS(train_detector(std::vector<DetectionSample>{}, {}, cfg), InvalidArgument);
}
