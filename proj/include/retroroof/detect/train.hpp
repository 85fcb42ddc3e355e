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
 * @file train.hpp
 * @brief Detector training with augmentation, per-epoch validation mAP@50
 *        and early stopping.
 */

#pragma once

#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "retroroof/annotations.hpp"
#include "retroroof/detect/model.hpp"
#include "retroroof/evaluate.hpp"
#include "retroroof/nn/optim.hpp"
#include "retroroof/train_config.hpp"

namespace retroroof::detect {

struct DetectionSample {
  Raster image;
  std::vector<annotations::GroundTruthBox> boxes;
};

struct AugmentConfig {
  bool rotate90 = true;
  bool flip = true;
  double scale_min = 0.8;  // zoom about the image center
  double scale_max = 1.2;
  double brightness = 0.1;  // additive, uniform in +-brightness
  double contrast = 0.2;    // multiplicative about the mean, 1 +- contrast

  static AugmentConfig none() { return {false, false, 1.0, 1.0, 0.0, 0.0}; }
};

inline void to_json(nlohmann::json& j, const AugmentConfig& a) {
  j = {{"rotate90", a.rotate90},   {"flip", a.flip},         {"scale_min", a.scale_min},
       {"scale_max", a.scale_max}, {"brightness", a.brightness}, {"contrast", a.contrast}};
}
inline void from_json(const nlohmann::json& j, AugmentConfig& a) {
  const AugmentConfig d;
  a.rotate90 = j.value("rotate90", d.rotate90);
  a.flip = j.value("flip", d.flip);
  a.scale_min = j.value("scale_min", d.scale_min);
  a.scale_max = j.value("scale_max", d.scale_max);
  a.brightness = j.value("brightness", d.brightness);
  a.contrast = j.value("contrast", d.contrast);
}

struct DetectorTrainConfig {
  TrainConfig base{};  // Adam, lr 1e-3, batch 16, 100 epochs
  int patience = 10;   // epochs without a val mAP@50 gain before stopping
  int min_epochs = 30;  // patience is not counted before this epoch
  LossWeights weights{};
  AugmentConfig augment{};
  double clip_norm = 10.0;
  double eval_conf = 0.001;
};

inline void to_json(nlohmann::json& j, const DetectorTrainConfig& c) {
  j = {{"base", c.base},       {"patience", c.patience},   {"min_epochs", c.min_epochs},
       {"weights", c.weights}, {"augment", c.augment},     {"clip_norm", c.clip_norm},
       {"eval_conf", c.eval_conf}};
}
inline void from_json(const nlohmann::json& j, DetectorTrainConfig& c) {
  c = DetectorTrainConfig{};
  if (j.contains("base")) from_json(j.at("base"), c.base);
  c.patience = j.value("patience", c.patience);
  c.min_epochs = j.value("min_epochs", c.min_epochs);
  c.weights = j.value("weights", c.weights);
  c.augment = j.value("augment", c.augment);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.eval_conf = j.value("eval_conf", c.eval_conf);
}

struct DetectorEpoch {
  int epoch = 0;
  LossBreakdown loss;
  double val_map50 = 0.0;
  double seconds = 0.0;
};

struct DetectorTrainResult {
  Detector model;
  std::vector<DetectorEpoch> history;
  int best_epoch = -1;
  double best_val_map50 = 0.0;
  bool stopped_early = false;
};

namespace detail {

struct Augmented {
  nn::Tensor image;
  std::vector<annotations::GroundTruthBox> boxes;
};

/// Rotates by k quarter turns clockwise.
inline Augmented rotate90(const Augmented& in, int k) {
  Augmented cur = in;
  for (int i = 0; i < k; ++i) {
    const auto& x = cur.image;
    nn::Tensor r(x.c, x.w, x.h);
    for (int c = 0; c < x.c; ++c)
      for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) r.at(c, xx, x.h - 1 - y) = x.at(c, y, xx);
    for (auto& b : cur.boxes) b = {x.h - (b.y + b.h), b.x, b.h, b.w, b.category_id, b.source};
    cur.image = std::move(r);
  }
  return cur;
}

inline void hflip(Augmented& a) {
  auto& x = a.image;
  for (int c = 0; c < x.c; ++c)
    for (int y = 0; y < x.h; ++y)
      for (int i = 0, j = x.w - 1; i < j; ++i, --j) std::swap(x.at(c, y, i), x.at(c, y, j));
  for (auto& b : a.boxes) b.x = x.w - b.x - b.w;
}

/// Nearest-neighbour zoom by f about the center with edge replication;
/// boxes are clipped and dropped below the usual retention fraction.
inline void zoom(Augmented& a, double f) {
  const auto src = a.image;
  auto& x = a.image;
  const double cx = x.w / 2.0, cy = x.h / 2.0;
  for (int y = 0; y < x.h; ++y) {
    const int sy = std::clamp(static_cast<int>(std::floor((y + 0.5 - cy) / f + cy)), 0, x.h - 1);
    for (int xx = 0; xx < x.w; ++xx) {
      const int sx = std::clamp(static_cast<int>(std::floor((xx + 0.5 - cx) / f + cx)), 0, x.w - 1);
      for (int c = 0; c < x.c; ++c) x.at(c, y, xx) = src.at(c, sy, sx);
    }
  }
  std::vector<annotations::GroundTruthBox> kept;
  const GeoTransform identity(0.0, 0.0, 1.0, 1.0);
  for (const auto& b : a.boxes) {
    const double x0 = (b.x - cx) * f + cx, y0 = (b.y - cy) * f + cy;
    const annotations::WorldBox wb{x0, y0, x0 + b.w * f, y0 + b.h * f};
    if (x.w != x.h) {
      // box_to_tile_space clips to a square tile; clip the long side here
      const double kx1 = std::min<double>(wb.max_x, x.w), ky1 = std::min<double>(wb.max_y, x.h);
      const double kx0 = std::max(0.0, wb.min_x), ky0 = std::max(0.0, wb.min_y);
      if (kx1 <= kx0 || ky1 <= ky0) continue;
      if ((kx1 - kx0) * (ky1 - ky0) / (b.w * f * b.h * f) < annotations::kMinRetainedFraction) continue;
      kept.push_back({kx0, ky0, kx1 - kx0, ky1 - ky0, b.category_id, b.source});
      continue;
    }
    if (auto r = annotations::box_to_tile_space(wb, identity, {0, 0}, x.w)) {
      r->category_id = b.category_id;
      r->source = b.source;
      kept.push_back(*r);
    }
  }
  a.boxes = std::move(kept);
}

inline void photometric(Augmented& a, double brightness, double contrast) {
  auto& v = a.image.v;
  if (v.empty()) return;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  for (auto& s : v) s = static_cast<float>(std::clamp((s - mean) * contrast + mean + brightness, 0.0, 1.0));
}

}  // namespace detail

/// Applies the configured augmentations in the order rotate, flip, zoom,
/// photometric.
inline detail::Augmented augment(const nn::Tensor& image, std::span<const annotations::GroundTruthBox> boxes,
                                 const AugmentConfig& cfg, nn::Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  detail::Augmented a{image, {boxes.begin(), boxes.end()}};
  if (cfg.rotate90) {
    const int k = static_cast<int>(u(rng) * 4) % 4;
    if (image.w == image.h) a = detail::rotate90(a, k);
    else if (k % 2 == 0) a = detail::rotate90(a, k);
  }
  if (cfg.flip && u(rng) < 0.5) detail::hflip(a);
  if (cfg.scale_min != 1.0 || cfg.scale_max != 1.0) {
    detail::zoom(a, cfg.scale_min + (cfg.scale_max - cfg.scale_min) * u(rng));
  }
  if (cfg.brightness > 0 || cfg.contrast > 0) {
    const double b = cfg.brightness * (2 * u(rng) - 1), c = 1 + cfg.contrast * (2 * u(rng) - 1);
    detail::photometric(a, b, c);
  }
  return a;
}

/// Detections in evaluate's form for a set of samples; image ids are sample
/// indices.
inline std::vector<evaluate::Detection> predict_samples(std::span<const DetectionSample> samples,
                                                        const Detector& model, double conf) {
  std::vector<evaluate::Detection> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (const auto& p : predict(samples[i].image, model, conf))
      out.push_back({static_cast<std::int64_t>(i), {p.x, p.y, p.w, p.h}, p.score});
  return out;
}

inline std::vector<evaluate::GroundTruth> ground_truth_of(std::span<const DetectionSample> samples) {
  std::vector<evaluate::GroundTruth> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (const auto& b : samples[i].boxes) out.push_back({static_cast<std::int64_t>(i), {b.x, b.y, b.w, b.h}});
  return out;
}

/// mAP@50 over a sample set; 0 when it holds no boxes.
inline double samples_map50(std::span<const DetectionSample> samples, const Detector& model, double conf = 0.001) {
  const auto dets = predict_samples(samples, model, conf);
  const auto gts = ground_truth_of(samples);
  return evaluate::map50(dets, gts).value_or(0.0);
}

/// Loss and parameter gradients of one (already augmented) image.
inline LossBreakdown detector_step(const Detector& model, nn::ParameterSet& ps, const nn::Tensor& image,
                                   std::span<const annotations::GroundTruthBox> boxes, const LossWeights& w) {
  nn::Tape t;
  const auto heads = model.forward(t, t.input(image));
  std::array<nn::Tensor, 3> maps, grads;
  for (int l = 0; l < 3; ++l) maps[l] = t.value(heads[l]);
  const auto g = model.geometry(image.w, image.h);
  const auto a = assign_targets(boxes, g, model.config().num_classes);
  const auto lb = head_loss(model, maps, g, a, w, &grads);
  for (int l = 0; l < 3; ++l) t.seed_grad(heads[l], grads[l]);
  t.backward();
  t.accumulate_into(ps);
  return lb;
}

/// Trains from scratch. With an empty `val`, a val_fraction share of `train`
/// is held out. The returned model carries the parameters of the best
/// validation epoch.
inline DetectorTrainResult train_detector(std::span<const DetectionSample> train_in,
                                          std::span<const DetectionSample> val_in, const DetectorTrainConfig& cfg,
                                          const DetectorConfig& arch = {}) {
  if (train_in.empty()) throw InvalidArgument("train_detector: empty training set");
  if (cfg.base.batch_size < 1 || cfg.base.epochs < 0) throw InvalidArgument("train_detector: bad batch or epochs");
  nn::Rng rng(nn::mix_seed(cfg.base.seed, 21));

  std::vector<DetectionSample> train(train_in.begin(), train_in.end()), val(val_in.begin(), val_in.end());
  if (val.empty() && train.size() > 1) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::floor(cfg.base.val_fraction * train.size()));
    std::vector<DetectionSample> t2;
    for (std::size_t k = 0; k < order.size(); ++k) (k < n_val ? val : t2).push_back(train[order[k]]);
    train = std::move(t2);
  }

  std::vector<nn::Tensor> inputs;
  for (const auto& s : train) {
    auto x = Detector::to_input(s.image);
    if (x.w % kMaxStride || x.h % kMaxStride) {
      throw DimensionMismatch("train_detector: training tiles must be a multiple of 32 in both dims");
    }
    inputs.push_back(std::move(x));
  }

  DetectorTrainResult res{Detector(arch, cfg.base.seed), {}, -1, -1.0, false};
  Detector& model = res.model;
  nn::ParameterSet best = model.params();
  nn::Adam opt({cfg.base.learning_rate, cfg.base.beta1, 0.999, 1e-8, cfg.clip_norm});
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = static_cast<std::size_t>(cfg.base.batch_size);
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.base.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    DetectorEpoch rec{epoch, {}, 0.0, 0.0};
    for (std::size_t s = 0; s < order.size(); s += batch) {
      const std::size_t end = std::min(order.size(), s + batch);
      for (std::size_t k = s; k < end; ++k) {
        const auto i = order[k];
        const auto aug = augment(inputs[i], train[i].boxes, cfg.augment, rng);
        const auto lb = detector_step(model, model.params(), aug.image, aug.boxes, cfg.weights);
        rec.loss.box += lb.box;
        rec.loss.obj += lb.obj;
        rec.loss.cls += lb.cls;
        rec.loss.total += lb.total;
      }
      opt.step(model.params(), 1.0 / static_cast<double>(end - s));
    }
    const double n = static_cast<double>(order.size());
    rec.loss.box /= n;
    rec.loss.obj /= n;
    rec.loss.cls /= n;
    rec.loss.total /= n;
    if (!std::isfinite(rec.loss.total) || !model.params().all_finite()) {
      throw TrainingDiverged("detector training diverged at epoch " + std::to_string(epoch));
    }
    rec.val_map50 = val.empty() ? 0.0 : samples_map50(val, model, cfg.eval_conf);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.history.push_back(rec);
    if (cfg.base.verbose) {
      std::cerr << "detector epoch " << epoch << " loss " << rec.loss.total << " (box " << rec.loss.box << ", obj "
                << rec.loss.obj << ", cls " << rec.loss.cls << ") val mAP@50 " << rec.val_map50 << " "
                << rec.seconds << "s\n";
    }
    if (rec.val_map50 > res.best_val_map50) {
      res.best_val_map50 = rec.val_map50;
      res.best_epoch = epoch;
      best = model.params();
      since_best = 0;
    } else if (++since_best >= cfg.patience && epoch + 1 >= cfg.min_epochs && !val.empty()) {
      res.stopped_early = true;
      break;
    }
  }
  if (res.best_epoch >= 0) model.params().load_values(best);
  return res;
}

}  // namespace retroroof::detect
