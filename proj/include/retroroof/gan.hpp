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
 * @file gan.hpp
 * @brief Adversarial building blocks shared by the colorizer and the
 *        super-resolution network: patch discriminator, GAN/L1 losses and
 *        one alternating discriminator/generator update.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "retroroof/error.hpp"
#include "retroroof/imagery.hpp"
#include "retroroof/nn/optim.hpp"
#include "retroroof/nn/parameters.hpp"
#include "retroroof/nn/tape.hpp"
#include "retroroof/nn/tensor.hpp"

namespace retroroof {

inline constexpr double kProbEpsilon = 1e-7;

inline double clamp_prob(double p) noexcept {
  return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
}

/// Per-patch realism probabilities.
struct PatchMap {
  int height = 0;
  int width = 0;
  std::vector<double> p;

  PatchMap() = default;
  PatchMap(int h, int w, double fill = 0.5) : height(h), width(w), p(std::size_t(h) * w, fill) {}
  std::size_t size() const noexcept { return p.size(); }
};

/// E[log D(real)] + E[log(1 - D(fake))], each expectation a mean over patches.
/// Probabilities are clamped to [1e-7, 1 - 1e-7]; the value is always <= 0.
inline double gan_loss(std::span<const double> d_real, std::span<const double> d_fake) {
  if (d_real.empty() || d_fake.empty()) throw InvalidArgument("gan_loss: empty patch map");
  double real = 0.0;
  for (double p : d_real) real += std::log(clamp_prob(p));
  double fake = 0.0;
  for (double p : d_fake) fake += std::log(1.0 - clamp_prob(p));
  return real / static_cast<double>(d_real.size()) + fake / static_cast<double>(d_fake.size());
}

inline double gan_loss(const PatchMap& d_real, const PatchMap& d_fake) {
  return gan_loss(d_real.p, d_fake.p);
}

/// d gan_loss / d d_fake. Zero where the clamp is active.
inline std::vector<double> gan_loss_grad_fake(std::span<const double> d_fake) {
  std::vector<double> g(d_fake.size());
  const double n = static_cast<double>(d_fake.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double p = d_fake[i];
    g[i] = (p < kProbEpsilon || p > 1.0 - kProbEpsilon) ? 0.0 : -1.0 / (n * (1.0 - p));
  }
  return g;
}

/// d gan_loss / d d_real. Zero where the clamp is active.
inline std::vector<double> gan_loss_grad_real(std::span<const double> d_real) {
  std::vector<double> g(d_real.size());
  const double n = static_cast<double>(d_real.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double p = d_real[i];
    g[i] = (p < kProbEpsilon || p > 1.0 - kProbEpsilon) ? 0.0 : 1.0 / (n * p);
  }
  return g;
}

/// Mean absolute difference over all samples.
template <class T>
double l1_loss(std::span<const T> real, std::span<const T> fake) {
  if (real.size() != fake.size()) throw DimensionMismatch("l1_loss: sample count mismatch");
  if (real.empty()) throw InvalidArgument("l1_loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < real.size(); ++i)
    acc += std::abs(static_cast<double>(fake[i]) - static_cast<double>(real[i]));
  return acc / static_cast<double>(real.size());
}

inline double l1_loss(const Raster& real, const Raster& fake) {
  require_same_dims(real, fake, "l1_loss");
  if (real.channels() != fake.channels()) throw DimensionMismatch("l1_loss: channel count mismatch");
  return l1_loss<double>(real.samples(), fake.samples());
}

/// Subgradient of l1_loss w.r.t. `fake`: sign(fake - real) / n, 0 on ties.
template <class T>
std::vector<T> l1_loss_grad(std::span<const T> real, std::span<const T> fake) {
  if (real.size() != fake.size()) throw DimensionMismatch("l1_loss_grad: sample count mismatch");
  std::vector<T> g(real.size());
  const T inv_n = T(1) / static_cast<T>(real.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const T d = fake[i] - real[i];
    g[i] = d > T(0) ? inv_n : (d < T(0) ? -inv_n : T(0));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Patch discriminator
// ---------------------------------------------------------------------------

struct PatchDiscriminatorConfig {
  int in_channels = 3;
  int base_width = 16;
  int kernel = 4;
  /// One entry per conv layer; the last layer emits the single-channel patch
  /// logit. {2,2,2,1,1} is the classic 70x70 layout.
  std::vector<int> strides = {2, 1, 1};
  int max_width_multiplier = 8;
};

inline void to_json(nlohmann::json& j, const PatchDiscriminatorConfig& c) {
  j = {{"in_channels", c.in_channels},
       {"base_width", c.base_width},
       {"kernel", c.kernel},
       {"strides", c.strides},
       {"max_width_multiplier", c.max_width_multiplier}};
}

inline void from_json(const nlohmann::json& j, PatchDiscriminatorConfig& c) {
  c.in_channels = j.at("in_channels");
  c.base_width = j.at("base_width");
  c.kernel = j.at("kernel");
  c.strides = j.at("strides").get<std::vector<int>>();
  c.max_width_multiplier = j.at("max_width_multiplier");
}

class PatchDiscriminator {
 public:
  PatchDiscriminator() = default;

  PatchDiscriminator(const PatchDiscriminatorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.strides.empty()) throw InvalidArgument("discriminator needs at least one layer");
    nn::Rng rng(seed);
    int in = cfg.in_channels;
    for (std::size_t l = 0; l < cfg.strides.size(); ++l) {
      const bool last = l + 1 == cfg.strides.size();
      const int mult = std::min(1 << l, cfg.max_width_multiplier);
      const int out = last ? 1 : cfg.base_width * mult;
      layers_.push_back(nn::make_conv(params_, "disc." + std::to_string(l), in, out, cfg.kernel,
                                      cfg.strides[l], 1, rng));
      in = out;
    }
  }

  const PatchDiscriminatorConfig& config() const noexcept { return cfg_; }
  nn::ParameterSet& params() noexcept { return params_; }
  const nn::ParameterSet& params() const noexcept { return params_; }

  /// Receptive field of one output patch, in input pixels.
  int receptive_field() const noexcept {
    int rf = 1;
    for (auto it = cfg_.strides.rbegin(); it != cfg_.strides.rend(); ++it)
      rf = (rf - 1) * *it + cfg_.kernel;
    return rf;
  }

  std::pair<int, int> output_dims(int height, int width) const noexcept {
    for (const auto& l : layers_) {
      height = l.output_size(height);
      width = l.output_size(width);
    }
    return {height, width};
  }

  nn::Tape::Var logits(nn::Tape& tape, nn::Tape::Var x) const {
    const auto& in = tape.value(x);
    if (in.h < receptive_field() || in.w < receptive_field()) {
      throw DimensionMismatch("discriminator: image " + std::to_string(in.w) + "x" +
                              std::to_string(in.h) + " is smaller than the receptive field " +
                              std::to_string(receptive_field()));
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      x = tape.conv2d(x, params_, layers_[l]);
      if (l + 1 < layers_.size()) x = tape.leaky_relu(x, 0.2f);
    }
    return x;
  }

  PatchMap forward(const nn::Tensor& image) const {
    nn::Tape tape(false);
    const auto z = logits(tape, tape.input(image));
    tape.check_finite(z, "discriminator");
    const auto& t = tape.value(z);
    PatchMap m(t.h, t.w);
    for (std::size_t i = 0; i < m.size(); ++i) m.p[i] = 1.0 / (1.0 + std::exp(-double(t.v[i])));
    return m;
  }

 private:
  PatchDiscriminatorConfig cfg_;
  nn::ParameterSet params_;
  std::vector<nn::Conv2d> layers_;
};

// ---------------------------------------------------------------------------
// Losses on discriminator logits, with gradients
// ---------------------------------------------------------------------------

struct LogitLoss {
  double value = 0.0;
  std::vector<double> d_a;  // gradient w.r.t. the first logit map
  std::vector<double> d_b;  // gradient w.r.t. the second logit map
};

inline double sigmoid(double z) noexcept { return 1.0 / (1.0 + std::exp(-z)); }

/// -[mean log s(a) + mean log(1 - s(b))]: the discriminator objective with
/// `a` real and `b` fake. Value reported on clamped probabilities.
inline LogitLoss standard_d_loss(std::span<const float> a, std::span<const float> b) {
  LogitLoss r;
  r.d_a.resize(a.size());
  r.d_b.resize(b.size());
  std::vector<double> pa(a.size()), pb(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[i] = sigmoid(a[i]);
    r.d_a[i] = -(1.0 - pa[i]) / double(a.size());
  }
  for (std::size_t j = 0; j < b.size(); ++j) {
    pb[j] = sigmoid(b[j]);
    r.d_b[j] = pb[j] / double(b.size());
  }
  r.value = -gan_loss(pa, pb);
  return r;
}

/// Non-saturating generator objective -mean log s(b) on the fake logits.
inline LogitLoss standard_g_loss(std::span<const float> b) {
  LogitLoss r;
  r.d_b.resize(b.size());
  double acc = 0.0;
  for (std::size_t j = 0; j < b.size(); ++j) {
    const double p = sigmoid(b[j]);
    acc -= std::log(clamp_prob(p));
    r.d_b[j] = -(1.0 - p) / double(b.size());
  }
  r.value = acc / double(b.size());
  return r;
}

/// Relativistic-average objective: -mean log s(a - mean b) - mean log(1 - s(b - mean a)).
/// With (real, fake) it is the discriminator loss, with (fake, real) the
/// generator loss.
inline LogitLoss relativistic_loss(std::span<const float> a, std::span<const float> b) {
  const double na = double(a.size()), nb = double(b.size());
  double mean_a = 0.0, mean_b = 0.0;
  for (float x : a) mean_a += x;
  for (float x : b) mean_b += x;
  mean_a /= na;
  mean_b /= nb;
  LogitLoss r;
  r.d_a.resize(a.size());
  r.d_b.resize(b.size());
  double t1 = 0.0, t2 = 0.0, sum_one_minus_sa = 0.0, sum_sb = 0.0;
  std::vector<double> sa(a.size()), sb(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa[i] = sigmoid(a[i] - mean_b);
    t1 -= std::log(clamp_prob(sa[i]));
    sum_one_minus_sa += 1.0 - sa[i];
  }
  for (std::size_t j = 0; j < b.size(); ++j) {
    sb[j] = sigmoid(b[j] - mean_a);
    t2 -= std::log(1.0 - clamp_prob(sb[j]));
    sum_sb += sb[j];
  }
  r.value = t1 / na + t2 / nb;
  for (std::size_t i = 0; i < a.size(); ++i) r.d_a[i] = -(1.0 - sa[i]) / na - sum_sb / (na * nb);
  for (std::size_t j = 0; j < b.size(); ++j) r.d_b[j] = sb[j] / nb + sum_one_minus_sa / (na * nb);
  return r;
}

// ---------------------------------------------------------------------------
// One adversarial update
// ---------------------------------------------------------------------------

struct AdversarialWeights {
  double adversarial = 1.0;
  double reconstruction = 100.0;
  bool relativistic = false;
};

struct AdversarialStats {
  double d_loss = 0.0;
  double g_adv = 0.0;
  double g_rec = 0.0;
};

/// Runs one discriminator update followed by one generator update on a batch.
/// `forward(tape, i)` builds sample i's generator graph on `tape` and returns
/// the fake image in discriminator space; `real[i]` is its target there. The
/// reconstruction term is the L1 distance between the two. With a zero
/// adversarial weight the discriminator is left untouched.
template <class GeneratorForward>
AdversarialStats adversarial_update(std::span<const std::size_t> batch, GeneratorForward&& forward,
                                    std::span<const nn::Tensor> real, PatchDiscriminator& disc,
                                    nn::ParameterSet& gen_params, nn::Adam& gen_opt,
                                    nn::Adam& disc_opt, const AdversarialWeights& w) {
  AdversarialStats stats;
  const bool adversarial = w.adversarial > 0.0;
  std::vector<nn::Tape> tapes;
  std::vector<nn::Tape::Var> fakes;
  tapes.reserve(batch.size());
  for (std::size_t i : batch) {
    tapes.emplace_back(true);
    fakes.push_back(forward(tapes.back(), i));
    tapes.back().check_finite(fakes.back(), "generator");
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  if (adversarial) {
    for (std::size_t k = 0; k < batch.size(); ++k) {
      nn::Tape t(true);
      const auto lr = disc.logits(t, t.input(real[batch[k]]));
      const auto lf = disc.logits(t, t.input(tapes[k].value(fakes[k])));
      const auto& vr = t.value(lr).v;
      const auto& vf = t.value(lf).v;
      const LogitLoss loss = w.relativistic ? relativistic_loss(vr, vf) : standard_d_loss(vr, vf);
      if (!std::isfinite(loss.value)) throw TrainingDiverged("discriminator loss is not finite");
      stats.d_loss += loss.value * inv_b;
      nn::Tensor gr(t.value(lr).c, t.value(lr).h, t.value(lr).w);
      nn::Tensor gf(t.value(lf).c, t.value(lf).h, t.value(lf).w);
      for (std::size_t i = 0; i < gr.size(); ++i) gr.v[i] = static_cast<float>(loss.d_a[i]);
      for (std::size_t i = 0; i < gf.size(); ++i) gf.v[i] = static_cast<float>(loss.d_b[i]);
      t.seed_grad(lr, gr);
      t.seed_grad(lf, gf);
      t.backward();
      t.accumulate_into(disc.params());
    }
    disc_opt.step(disc.params(), inv_b);
  }

  for (std::size_t k = 0; k < batch.size(); ++k) {
    nn::Tape& t = tapes[k];
    const nn::Tensor& target = real[batch[k]];
    const nn::Tensor& fake = t.value(fakes[k]);
    if (!fake.same_shape(target)) throw DimensionMismatch("generator output does not match target");
    const double rec = l1_loss<float>(target.v, fake.v);
    if (!std::isfinite(rec)) throw TrainingDiverged("reconstruction loss is not finite");
    stats.g_rec += rec * inv_b;
    auto rec_grad = l1_loss_grad<float>(target.v, fake.v);
    nn::Tensor g(fake.c, fake.h, fake.w);
    for (std::size_t i = 0; i < g.size(); ++i)
      g.v[i] = static_cast<float>(w.reconstruction) * rec_grad[i];
    t.seed_grad(fakes[k], g);
    if (adversarial) {
      const auto lf = disc.logits(t, fakes[k]);
      LogitLoss loss;
      nn::Tensor gf(t.value(lf).c, t.value(lf).h, t.value(lf).w);
      if (w.relativistic) {
        nn::Tape side(false);
        const auto lr = disc.logits(side, side.input(target));
        loss = relativistic_loss(t.value(lf).v, side.value(lr).v);
        for (std::size_t i = 0; i < gf.size(); ++i)
          gf.v[i] = static_cast<float>(w.adversarial * loss.d_a[i]);
      } else {
        loss = standard_g_loss(t.value(lf).v);
        for (std::size_t i = 0; i < gf.size(); ++i)
          gf.v[i] = static_cast<float>(w.adversarial * loss.d_b[i]);
      }
      if (!std::isfinite(loss.value)) throw TrainingDiverged("generator adversarial loss is not finite");
      stats.g_adv += loss.value * inv_b;
      t.seed_grad(lf, gf);
    }
    t.backward();
    t.accumulate_into(gen_params);
  }
  gen_opt.step(gen_params, inv_b);
  return stats;
}

}  // namespace retroroof
