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
 * @file model.hpp
 * @brief Single-stage detector: CSP backbone, PAN neck, dense head at
 *        strides 8/16/32, plus box decoding and the loss gradient at the head.
 */

#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "retroroof/detect/assign.hpp"
#include "retroroof/detect/losses.hpp"
#include "retroroof/detect/nms.hpp"
#include "retroroof/error.hpp"
#include "retroroof/imagery.hpp"
#include "retroroof/nn/checkpoint.hpp"
#include "retroroof/nn/tape.hpp"

namespace retroroof::detect {

struct DetectorConfig {
  int num_classes = 1;
  int width = 16;  // channels after the stem; deeper stages use 2x, 4x, 8x
  int depth = 1;   // bottlenecks per CSP block
  /// Channels per group-norm group after every hidden conv; 0 disables
  /// normalization.
  int group_channels = 8;

  static DetectorConfig nano() { return {}; }
};

inline void to_json(nlohmann::json& j, const DetectorConfig& c) {
  j = {{"num_classes", c.num_classes}, {"width", c.width}, {"depth", c.depth}, {"group_channels", c.group_channels}};
}
inline void from_json(const nlohmann::json& j, DetectorConfig& c) {
  const DetectorConfig d;
  c.num_classes = j.value("num_classes", d.num_classes);
  c.width = j.value("width", d.width);
  c.depth = j.value("depth", d.depth);
  c.group_channels = j.value("group_channels", d.group_channels);
}

inline constexpr std::array<int, 3> kStrides = {8, 16, 32};
inline constexpr int kMaxStride = 32;

/// Scored output box, top-left corner form, in input-image pixels.
struct Prediction {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  double score = 0.0;
  int class_id = 1;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// conv -> optional group norm -> SiLU
struct ConvUnit {
  nn::Conv2d conv;
  bool norm = false;
  nn::GroupNorm gn;
};

struct CspBlock {
  ConvUnit split_a, split_b, merge;
  std::vector<std::array<ConvUnit, 2>> bottlenecks;
};

}  // namespace detail

class Detector {
 public:
  Detector() = default;

  Detector(const DetectorConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    if (cfg.num_classes < 1) throw InvalidArgument("detector needs at least one class");
    if (cfg.width < 2 || cfg.width % 2 != 0) throw InvalidArgument("detector width must be even and >= 2");
    if (cfg.depth < 0) throw InvalidArgument("detector depth must be >= 0");
    if (cfg.group_channels < 0) throw InvalidArgument("detector group_channels must be >= 0");
    nn::Rng rng(nn::mix_seed(seed, 0));
    const int w = cfg.width;
    auto conv = [&](const std::string& n, int in, int out, int k, int s) { return unit(n, in, out, k, s, rng); };
    stem_ = conv("det.stem", 3, w, 3, 2);
    down_[0] = conv("det.down1", w, 2 * w, 3, 2);
    csp_[0] = make_csp("det.csp1", 2 * w, 2 * w, rng);
    down_[1] = conv("det.down2", 2 * w, 4 * w, 3, 2);
    csp_[1] = make_csp("det.csp2", 4 * w, 4 * w, rng);
    down_[2] = conv("det.down3", 4 * w, 8 * w, 3, 2);
    csp_[2] = make_csp("det.csp3", 8 * w, 8 * w, rng);
    down_[3] = conv("det.down4", 8 * w, 8 * w, 3, 2);
    csp_[3] = make_csp("det.csp4", 8 * w, 8 * w, rng);

    td4_ = make_csp("det.neck.td4", 16 * w, 4 * w, rng);
    td3_ = make_csp("det.neck.td3", 8 * w, 2 * w, rng);
    bu_down4_ = conv("det.neck.down4", 2 * w, 2 * w, 3, 2);
    bu4_ = make_csp("det.neck.bu4", 6 * w, 4 * w, rng);
    bu_down5_ = conv("det.neck.down5", 4 * w, 4 * w, 3, 2);
    bu5_ = make_csp("det.neck.bu5", 12 * w, 8 * w, rng);

    const std::array<int, 3> head_in = {2 * w, 4 * w, 8 * w};
    for (int l = 0; l < 3; ++l) {
      const std::string n = "det.head" + std::to_string(l);
      head_mid_[l] = conv(n + ".mid", head_in[l], head_in[l], 3, 1);
      head_out_[l] = nn::make_conv(ps_, n + ".out", head_in[l], outputs_per_slot(), 1, 1, 0, rng, nn::Init::Zero);
    }
  }

  const DetectorConfig& config() const noexcept { return cfg_; }
  std::uint64_t seed() const noexcept { return seed_; }
  nn::ParameterSet& params() noexcept { return ps_; }
  const nn::ParameterSet& params() const noexcept { return ps_; }
  int outputs_per_slot() const noexcept { return 5 + cfg_.num_classes; }

  /// Raw head maps at strides 8, 16, 32; channel order tx, ty, tw, th, obj,
  /// class logits.
  std::array<nn::Tape::Var, 3> forward(nn::Tape& t, nn::Tape::Var x) const {
    const auto& in = t.value(x);
    if (in.c != 3) throw ChannelMismatch("detector expects a 3-channel input");
    if (in.h % kMaxStride != 0 || in.w % kMaxStride != 0) {
      throw DimensionMismatch("detector input must be a multiple of 32 in both dims");
    }
    auto y = apply(t, x, stem_);
    y = csp(t, apply(t, y, down_[0]), csp_[0]);
    const auto c3 = csp(t, apply(t, y, down_[1]), csp_[1]);
    const auto c4 = csp(t, apply(t, c3, down_[2]), csp_[2]);
    const auto c5 = csp(t, apply(t, c4, down_[3]), csp_[3]);

    const auto td4 = csp(t, t.concat(t.upsample_nearest(c5, 2), c4), td4_);
    const auto p3 = csp(t, t.concat(t.upsample_nearest(td4, 2), c3), td3_);
    const auto p4 = csp(t, t.concat(apply(t, p3, bu_down4_), td4), bu4_);
    const auto p5 = csp(t, t.concat(apply(t, p4, bu_down5_), c5), bu5_);

    const std::array<nn::Tape::Var, 3> feats = {p3, p4, p5};
    std::array<nn::Tape::Var, 3> out{};
    for (int l = 0; l < 3; ++l) out[l] = t.conv2d(apply(t, feats[l], head_mid_[l]), ps_, head_out_[l]);
    return out;
  }

  /// Detector input tensor: RGB in [0,1]; luminance is replicated to three
  /// gray channels, LAB is converted to RGB.
  static nn::Tensor to_input(const Raster& r) {
    switch (r.layout()) {
      case ChannelLayout::Rgb:
        return nn::to_tensor(r);
      case ChannelLayout::Lab:
        return nn::to_tensor(lab_to_rgb(r));
      case ChannelLayout::Luminance: {
        nn::Tensor t(3, r.height(), r.width());
        const auto p = r.plane(0);
        for (int c = 0; c < 3; ++c)
          for (std::size_t i = 0; i < p.size(); ++i) t.v[c * p.size() + i] = static_cast<float>(p[i] / 100.0);
        return t;
      }
    }
    throw ChannelMismatch("unknown layout");
  }

  HeadGeometry geometry(int width, int height) const { return make_head_geometry(width, height, kStrides); }

  /// Decodes every slot. Center (col + 2 sig(tx) - 0.5) * stride, size
  /// 8 * stride * sig(tw)^2, objectness sig(obj), classes softmax.
  std::vector<BoxPrediction> decode(const std::array<nn::Tensor, 3>& maps, const HeadGeometry& g) const {
    std::vector<BoxPrediction> out(g.slot_count());
    const int nc = cfg_.num_classes;
    for (std::size_t l = 0; l < 3; ++l) {
      const auto& m = maps[l];
      const auto& lv = g.levels[l];
      if (m.c != outputs_per_slot() || m.h != lv.rows || m.w != lv.cols) {
        throw DimensionMismatch("decode: head map does not match the grid");
      }
      const double s = lv.stride;
      for (int r = 0; r < lv.rows; ++r)
        for (int c = 0; c < lv.cols; ++c) {
          auto& p = out[g.slot(l, r, c)];
          const double sx = detail::sigmoid(m.at(0, r, c)), sy = detail::sigmoid(m.at(1, r, c));
          const double sw = detail::sigmoid(m.at(2, r, c)), sh = detail::sigmoid(m.at(3, r, c));
          p.box = {(c + 2 * sx - 0.5) * s, (r + 2 * sy - 0.5) * s, 8 * s * sw * sw, 8 * s * sh * sh};
          p.objectness = detail::sigmoid(m.at(4, r, c));
          p.class_probs.assign(nc, 0.0);
          double mx = m.at(5, r, c), z = 0.0;
          for (int k = 1; k < nc; ++k) mx = std::max(mx, static_cast<double>(m.at(5 + k, r, c)));
          for (int k = 0; k < nc; ++k) z += p.class_probs[k] = std::exp(m.at(5 + k, r, c) - mx);
          for (auto& q : p.class_probs) q /= z;
        }
    }
    return out;
  }

  void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const {
    nn::save_checkpoint(path, "detector", cfg_, seed_, ps_, extra);
  }

  static Detector load(const std::filesystem::path& path) {
    const auto ck = nn::load_checkpoint(path);
    if (ck.kind != "detector") throw ValidationError(path.string() + ": not a detector checkpoint");
    Detector d(ck.config.get<DetectorConfig>(), ck.seed);
    d.ps_.load_values(ck.params);
    return d;
  }

 private:
  detail::ConvUnit unit(const std::string& name, int in, int out, int k, int stride, nn::Rng& rng) {
    detail::ConvUnit u;
    const int gc = cfg_.group_channels;
    u.norm = gc > 0;
    u.conv = nn::make_conv(ps_, name, in, out, k, stride, k / 2, rng, nn::Init::He, !u.norm);
    if (u.norm) u.gn = nn::make_group_norm(ps_, name + ".gn", out, out % gc == 0 ? out / gc : 1);
    return u;
  }

  nn::Tape::Var apply(nn::Tape& t, nn::Tape::Var x, const detail::ConvUnit& u) const {
    auto y = t.conv2d(x, ps_, u.conv);
    if (u.norm) y = t.group_norm(y, ps_, u.gn);
    return t.silu(y);
  }

  detail::CspBlock make_csp(const std::string& name, int in, int out, nn::Rng& rng) {
    detail::CspBlock b;
    const int h = out / 2;
    auto conv = [&](const std::string& n, int i, int o, int k) { return unit(n, i, o, k, 1, rng); };
    b.split_a = conv(name + ".a", in, h, 1);
    b.split_b = conv(name + ".b", in, h, 1);
    for (int i = 0; i < cfg_.depth; ++i) {
      const std::string n = name + ".m" + std::to_string(i);
      b.bottlenecks.push_back({conv(n + ".conv1", h, h, 3), conv(n + ".conv2", h, h, 3)});
    }
    b.merge = conv(name + ".merge", 2 * h, out, 1);
    return b;
  }

  nn::Tape::Var csp(nn::Tape& t, nn::Tape::Var x, const detail::CspBlock& b) const {
    auto a = apply(t, x, b.split_a);
    const auto skip = apply(t, x, b.split_b);
    for (const auto& m : b.bottlenecks) a = t.add(a, apply(t, apply(t, a, m[0]), m[1]));
    return apply(t, t.concat(a, skip), b.merge);
  }

  DetectorConfig cfg_;
  std::uint64_t seed_ = 0;
  nn::ParameterSet ps_;
  detail::ConvUnit stem_;
  std::array<detail::ConvUnit, 4> down_{};
  std::array<detail::CspBlock, 4> csp_{};
  detail::CspBlock td4_, td3_, bu4_, bu5_;
  detail::ConvUnit bu_down4_, bu_down5_;
  std::array<detail::ConvUnit, 3> head_mid_{};
  std::array<nn::Conv2d, 3> head_out_{};
};

struct LossBreakdown {
  double box = 0.0;
  double obj = 0.0;
  double cls = 0.0;
  double total = 0.0;
};

/// Loss of one image and, when `grads` is given, d total / d raw head maps.
inline LossBreakdown head_loss(const Detector& model, const std::array<nn::Tensor, 3>& maps, const HeadGeometry& g,
                               const TargetAssignment& a, const LossWeights& w,
                               std::array<nn::Tensor, 3>* grads = nullptr) {
  const auto preds = model.decode(maps, g);
  LossBreakdown lb;
  lb.box = box_loss(a, preds);
  lb.obj = objectness_loss(a, preds);
  lb.cls = classification_loss(a, preds);
  lb.total = total_loss(w, lb.box, lb.obj, lb.cls);
  if (!grads) return lb;

  const double n_pos = static_cast<double>(std::max<std::size_t>(1, a.num_positive()));
  const double n_all = static_cast<double>(std::max<std::size_t>(1, a.num_slots()));
  const int nc = model.config().num_classes;
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& m = maps[l];
    auto& gm = (*grads)[l] = nn::Tensor(m.c, m.h, m.w);
    const auto& lv = g.levels[l];
    const double s = lv.stride;
    for (int r = 0; r < lv.rows; ++r)
      for (int c = 0; c < lv.cols; ++c) {
        const std::size_t i = g.slot(l, r, c);
        const auto& p = preds[i];
        // objectness BCE; no gradient where the clamp is active
        if (p.objectness > kProbClamp && p.objectness < 1 - kProbClamp) {
          gm.at(4, r, c) = static_cast<float>(w.obj * (p.objectness - a.positive[i]) / n_all);
        }
        if (!a.positive[i]) continue;
        const auto ci = ciou(a.target[i], p.box);
        std::array<double, 4> dt{};
        for (int k = 0; k < 4; ++k) {
          const double sg = detail::sigmoid(m.at(k, r, c));
          const double dsig = sg * (1 - sg);
          dt[k] = k < 2 ? 2 * s * dsig : 16 * s * sg * dsig;
        }
        for (int k = 0; k < 4; ++k) gm.at(k, r, c) = static_cast<float>(w.box * ci.grad[k] * dt[k] / n_pos);
        if (nc > 1) {
          for (int k = 0; k < nc; ++k) {
            const double y = k == a.label[i] ? 1.0 : 0.0;
            gm.at(5 + k, r, c) = static_cast<float>(w.cls * (p.class_probs[k] - y) / n_pos);
          }
        }
      }
  }
  return lb;
}

/// Dense decoded predictions for one image. Inputs whose dims are not
/// multiples of 32 are zero-padded on the right and bottom.
inline std::vector<BoxPrediction> detector_forward(const Raster& img, const Detector& model) {
  const nn::Tensor x = nn::pad_to_multiple(Detector::to_input(img), kMaxStride);
  nn::Tape t(false);
  const auto heads = model.forward(t, t.input(x));
  std::array<nn::Tensor, 3> maps;
  for (int l = 0; l < 3; ++l) {
    t.check_finite(heads[l], "detector head");
    maps[l] = t.value(heads[l]);
  }
  return model.decode(maps, model.geometry(x.w, x.h));
}

inline constexpr double kDefaultConf = 0.25;
inline constexpr double kDefaultNmsIou = 0.5;

/// Forward, NMS, then boxes clipped to the image. Boxes with no area left
/// after clipping are dropped.
inline std::vector<Prediction> predict(const Raster& img, const Detector& model, double conf_thresh = kDefaultConf,
                                       double iou_thresh = kDefaultNmsIou, std::size_t max_det = 300) {
  const auto dense = detector_forward(img, model);
  std::vector<Prediction> out;
  for (const auto& p : nms(dense, iou_thresh, conf_thresh, max_det)) {
    const double x0 = std::max(0.0, p.box.cx - p.box.w / 2), y0 = std::max(0.0, p.box.cy - p.box.h / 2);
    const double x1 = std::min<double>(img.width(), p.box.cx + p.box.w / 2);
    const double y1 = std::min<double>(img.height(), p.box.cy + p.box.h / 2);
    if (x1 <= x0 || y1 <= y0) continue;
    out.push_back({x0, y0, x1 - x0, y1 - y0, p.score(), p.class_index() + 1});
  }
  return out;
}

}  // namespace retroroof::detect
