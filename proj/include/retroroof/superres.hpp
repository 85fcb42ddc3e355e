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
 * @file superres.hpp
 * @brief Residual super-resolution generator, synthetic degradation and
 *        tiled upscaling.
 *
 * The generator predicts a residual on top of a nearest-neighbour upscale of
 * its input; its last conv starts at zero, so an untrained network is exactly
 * the nearest-neighbour upscaler.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "retroroof/error.hpp"
#include "retroroof/gan.hpp"
#include "retroroof/imagery.hpp"
#include "retroroof/nn/checkpoint.hpp"
#include "retroroof/nn/optim.hpp"
#include "retroroof/nn/tape.hpp"
#include "retroroof/train_config.hpp"

namespace retroroof::superres {

// ---------------------------------------------------------------------------
// Degradation
// ---------------------------------------------------------------------------

struct DegradationConfig {
  int scale = 4;
  double blur_sigma_min = 0.0;
  double blur_sigma_max = 1.0;
  /// Noise standard deviation in [0,1] intensity units (scaled to the
  /// channel's range for L/LAB rasters).
  double noise_sigma_min = 0.0;
  double noise_sigma_max = 0.02;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const DegradationConfig& c) {
  j = {{"scale", c.scale},
       {"blur_sigma_min", c.blur_sigma_min},
       {"blur_sigma_max", c.blur_sigma_max},
       {"noise_sigma_min", c.noise_sigma_min},
       {"noise_sigma_max", c.noise_sigma_max},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, DegradationConfig& c) {
  c.scale = j.value("scale", 4);
  c.blur_sigma_min = j.value("blur_sigma_min", 0.0);
  c.blur_sigma_max = j.value("blur_sigma_max", 1.0);
  c.noise_sigma_min = j.value("noise_sigma_min", 0.0);
  c.noise_sigma_max = j.value("noise_sigma_max", 0.02);
  c.seed = j.value("seed", std::uint64_t{0});
}

namespace detail {

inline std::pair<double, double> channel_range(ChannelLayout layout, int c) {
  switch (layout) {
    case ChannelLayout::Luminance: return {0.0, 100.0};
    case ChannelLayout::Rgb: return {0.0, 1.0};
    case ChannelLayout::Lab: return c == 0 ? std::pair{0.0, 100.0} : std::pair{-128.0, 128.0};
  }
  return {0.0, 1.0};
}

inline int mirror(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

inline Raster gaussian_blur(const Raster& src, double sigma) {
  if (sigma <= 0.0) return src;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  Raster tmp(src.width(), src.height(), src.layout());
  Raster out(src.width(), src.height(), src.layout());
  for (int c = 0; c < src.channels(); ++c) {
    for (int y = 0; y < src.height(); ++y)
      for (int x = 0; x < src.width(); ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * src.at(c, y, mirror(x + i, src.width()));
        tmp.at(c, y, x) = acc;
      }
    for (int y = 0; y < src.height(); ++y)
      for (int x = 0; x < src.width(); ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(c, mirror(y + i, src.height()), x);
        out.at(c, y, x) = acc;
      }
  }
  return out;
}

}  // namespace detail

/// Mean over non-overlapping factor x factor blocks.
inline Raster area_downsample(const Raster& src, int factor) {
  if (factor < 1 || src.width() % factor != 0 || src.height() % factor != 0) {
    throw DimensionMismatch("area_downsample: " + std::to_string(src.width()) + "x" +
                            std::to_string(src.height()) + " is not divisible by " +
                            std::to_string(factor));
  }
  Raster out(src.width() / factor, src.height() / factor, src.layout());
  const double inv = 1.0 / (factor * factor);
  for (int c = 0; c < src.channels(); ++c)
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) {
        double acc = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) acc += src.at(c, y * factor + dy, x * factor + dx);
        out.at(c, y, x) = acc * inv;
      }
  return out;
}

/// blur -> area downsample by `scale` -> additive Gaussian noise -> clip.
/// Blur and noise strengths are drawn from the configured ranges with the
/// configured seed.
inline Raster degrade(const Raster& hr, const DegradationConfig& cfg) {
  if (cfg.scale < 1) throw InvalidArgument("degrade: scale must be >= 1");
  if (cfg.blur_sigma_min < 0 || cfg.blur_sigma_max < cfg.blur_sigma_min || cfg.noise_sigma_min < 0 ||
      cfg.noise_sigma_max < cfg.noise_sigma_min) {
    throw InvalidArgument("degrade: sigma ranges must be non-negative and ordered");
  }
  if (hr.width() % cfg.scale != 0 || hr.height() % cfg.scale != 0) {
    throw DimensionMismatch("degrade: " + std::to_string(hr.width()) + "x" +
                            std::to_string(hr.height()) + " is not divisible by scale " +
                            std::to_string(cfg.scale));
  }
  nn::Rng rng(cfg.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double blur = cfg.blur_sigma_min + (cfg.blur_sigma_max - cfg.blur_sigma_min) * u01(rng);
  const double noise = cfg.noise_sigma_min + (cfg.noise_sigma_max - cfg.noise_sigma_min) * u01(rng);
  Raster lr = area_downsample(detail::gaussian_blur(hr, blur), cfg.scale);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int c = 0; c < lr.channels(); ++c) {
    const auto [lo, hi] = detail::channel_range(lr.layout(), c);
    const double sigma = noise * (lr.layout() == ChannelLayout::Rgb ? 1.0 : (c == 0 ? 100.0 : 128.0));
    for (double& v : lr.plane(c)) {
      if (sigma > 0.0) v += sigma * gauss(rng);
      v = std::clamp(v, lo, hi);
    }
  }
  return lr;
}

/// Nearest-neighbour upscale by an integer factor.
inline Raster nearest_upscale(const Raster& src, int factor) {
  Raster out(src.width() * factor, src.height() * factor, src.layout());
  for (int c = 0; c < src.channels(); ++c)
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) out.at(c, y, x) = src.at(c, y / factor, x / factor);
  return out;
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

struct SRConfig {
  int channels = 3;
  int scale = 4;
  int features = 16;
  int groups = 2;
  int blocks_per_group = 2;
  float residual_scale = 0.2f;
  PatchDiscriminatorConfig discriminator{3, 16, 4, {2, 1, 1}, 8};
};

inline void to_json(nlohmann::json& j, const SRConfig& c) {
  j = {{"channels", c.channels},
       {"scale", c.scale},
       {"features", c.features},
       {"groups", c.groups},
       {"blocks_per_group", c.blocks_per_group},
       {"residual_scale", c.residual_scale},
       {"discriminator", c.discriminator}};
}

inline void from_json(const nlohmann::json& j, SRConfig& c) {
  c.channels = j.at("channels");
  c.scale = j.at("scale");
  c.features = j.at("features");
  c.groups = j.at("groups");
  c.blocks_per_group = j.at("blocks_per_group");
  c.residual_scale = j.at("residual_scale");
  c.discriminator = j.at("discriminator").get<PatchDiscriminatorConfig>();
}

struct SRBlock {
  nn::Conv2d conv1;
  nn::Conv2d conv2;
};

struct SRGroup {
  std::vector<SRBlock> blocks;
  nn::Conv2d fuse;
};

class SuperResolver {
 public:
  SuperResolver() = default;

  SuperResolver(const SRConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), seed_(seed), disc_(cfg.discriminator, nn::mix_seed(seed, 1)) {
    if (cfg.scale != 2 && cfg.scale != 4) throw InvalidArgument("super-resolution scale must be 2 or 4");
    if (cfg.channels != 1 && cfg.channels != 3) throw InvalidArgument("channels must be 1 or 3");
    if (cfg.discriminator.in_channels != cfg.channels) {
      throw InvalidArgument("discriminator channel count must match the generator");
    }
    nn::Rng rng(nn::mix_seed(seed, 0));
    auto& ps = gen_;
    const int f = cfg.features;
    head_ = nn::make_conv(ps, "sr.head", cfg.channels, f, 3, 1, 1, rng);
    for (int g = 0; g < cfg.groups; ++g) {
      SRGroup grp;
      const std::string gn = "sr.group" + std::to_string(g);
      for (int b = 0; b < cfg.blocks_per_group; ++b) {
        const std::string bn = gn + ".block" + std::to_string(b);
        grp.blocks.push_back({nn::make_conv(ps, bn + ".conv1", f, f, 3, 1, 1, rng),
                              nn::make_conv(ps, bn + ".conv2", f, f, 3, 1, 1, rng)});
      }
      grp.fuse = nn::make_conv(ps, gn + ".fuse", f, f, 3, 1, 1, rng);
      groups_.push_back(std::move(grp));
    }
    trunk_ = nn::make_conv(ps, "sr.trunk", f, f, 3, 1, 1, rng);
    for (int s = 1; s < cfg.scale; s *= 2)
      ups_.push_back(nn::make_conv(ps, "sr.up" + std::to_string(ups_.size()), f, f, 3, 1, 1, rng));
    out_ = nn::make_conv(ps, "sr.out", f, cfg.channels, 3, 1, 1, rng, nn::Init::Zero);
  }

  const SRConfig& config() const noexcept { return cfg_; }
  int scale() const noexcept { return cfg_.scale; }
  std::uint64_t seed() const noexcept { return seed_; }
  nn::ParameterSet& generator_params() noexcept { return gen_; }
  const nn::ParameterSet& generator_params() const noexcept { return gen_; }
  PatchDiscriminator& discriminator() noexcept { return disc_; }
  const PatchDiscriminator& discriminator() const noexcept { return disc_; }

  /// Input pixels on each side that can influence an output pixel.
  int receptive_radius() const noexcept {
    int r = 1 + cfg_.groups * (2 * cfg_.blocks_per_group + 1) + 1;
    // Convs after upsampling act at finer resolution; their reach in input
    // pixels rounds up to one each, plus the output conv.
    r += static_cast<int>(ups_.size()) + 1;
    return r;
  }

  nn::Tape::Var generate(nn::Tape& t, nn::Tape::Var x) const {
    const auto base = t.upsample_nearest(x, cfg_.scale);
    const auto& in = t.value(x);
    const auto centered = t.add(x, t.input(nn::Tensor(in.c, in.h, in.w, -0.5f)));
    auto feat = t.leaky_relu(t.conv2d(centered, gen_, head_));
    auto y = feat;
    for (const auto& grp : groups_) {
      auto z = y;
      for (const auto& blk : grp.blocks) {
        auto h = t.leaky_relu(t.conv2d(z, gen_, blk.conv1));
        h = t.conv2d(h, gen_, blk.conv2);
        z = t.add(z, t.scale(h, cfg_.residual_scale));
      }
      y = t.add(y, t.scale(t.conv2d(z, gen_, grp.fuse), cfg_.residual_scale));
    }
    y = t.add(feat, t.conv2d(y, gen_, trunk_));
    for (const auto& up : ups_) y = t.leaky_relu(t.conv2d(t.upsample_nearest(y, 2), gen_, up));
    return t.add(base, t.conv2d(y, gen_, out_));
  }

  nn::Tensor to_tensor(const Raster& r) const {
    if (r.layout() == ChannelLayout::Lab) throw ChannelMismatch("super-resolution expects RGB or L input");
    if (r.channels() != cfg_.channels) {
      throw ChannelMismatch("super-resolution model expects " + std::to_string(cfg_.channels) +
                            " channels, got " + std::to_string(r.channels()));
    }
    return nn::to_tensor(r, r.layout() == ChannelLayout::Luminance ? 0.01 : 1.0);
  }

  Raster to_raster(const nn::Tensor& t, ChannelLayout layout) const {
    Raster r = nn::to_raster(t, layout, layout == ChannelLayout::Luminance ? 100.0 : 1.0);
    const double hi = layout == ChannelLayout::Luminance ? 100.0 : 1.0;
    for (double& v : r.samples()) v = std::clamp(v, 0.0, hi);
    return r;
  }

  /// I_SR = G_SR(I_LR); output dims are exactly scale x input dims.
  Raster sr_forward(const Raster& lr) const {
    if (lr.width() < 3 || lr.height() < 3) throw DimensionMismatch("sr_forward: input must be at least 3x3");
    nn::Tape t(false);
    const auto out = generate(t, t.input(to_tensor(lr)));
    t.check_finite(out, "super-resolution generator");
    return to_raster(t.value(out), lr.layout());
  }

  PatchMap discriminator_forward(const Raster& hr) const { return disc_.forward(to_tensor(hr)); }

  void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const {
    nn::ParameterSet all = gen_;
    for (const auto& p : disc_.params()) all.add(p.name, p.shape, p.value);
    nn::save_checkpoint(path, "superres", cfg_, seed_, all, extra);
  }

  static SuperResolver load(const std::filesystem::path& path) {
    const auto ck = nn::load_checkpoint(path);
    if (ck.kind != "superres") throw ValidationError(path.string() + ": not a super-resolution checkpoint");
    SuperResolver m(ck.config.get<SRConfig>(), ck.seed);
    if (ck.params.size() != m.gen_.size() + m.disc_.params().size()) {
      throw ValidationError(path.string() + ": parameter count does not match architecture");
    }
    nn::ParameterSet gen, disc;
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
      const auto& p = ck.params[i];
      (i < m.gen_.size() ? gen : disc).add(p.name, p.shape, p.value);
    }
    m.gen_.load_values(gen);
    m.disc_.params().load_values(disc);
    return m;
  }

 private:
  SRConfig cfg_;
  std::uint64_t seed_ = 0;
  nn::ParameterSet gen_;
  PatchDiscriminator disc_;
  nn::Conv2d head_;
  std::vector<SRGroup> groups_;
  nn::Conv2d trunk_;
  std::vector<nn::Conv2d> ups_;
  nn::Conv2d out_;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline double sr_gan_loss(const PatchMap& d_real, const PatchMap& d_fake) {
  return gan_loss(d_real, d_fake);
}

/// Mean absolute error between the reference and the super-resolved image.
inline double sr_rec_loss(const Raster& hr, const Raster& sr) { return l1_loss(hr, sr); }

inline std::vector<double> sr_rec_loss_grad(const Raster& hr, const Raster& sr) {
  require_same_dims(hr, sr, "sr_rec_loss_grad");
  return l1_loss_grad<double>(hr.samples(), sr.samples());
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct SRTrainConfig {
  TrainConfig base{5, 1, 2e-3, 0.9, 0, 0.125, false};
  double lambda_adv = 0.1;
  double lambda_rec = 1.0;
  bool relativistic = false;
};

inline void to_json(nlohmann::json& j, const SRTrainConfig& c) {
  j = {{"base", c.base}, {"lambda_adv", c.lambda_adv}, {"lambda_rec", c.lambda_rec}, {"relativistic", c.relativistic}};
}

inline void from_json(const nlohmann::json& j, SRTrainConfig& c) {
  c = SRTrainConfig{};
  if (j.contains("base")) from_json(j.at("base"), c.base);
  c.lambda_adv = j.value("lambda_adv", c.lambda_adv);
  c.lambda_rec = j.value("lambda_rec", c.lambda_rec);
  c.relativistic = j.value("relativistic", c.relativistic);
}

struct SREpoch {
  int epoch = 0;
  double d_loss = 0.0;
  double g_adv = 0.0;
  double g_rec = 0.0;
  double val_rec = 0.0;
};

struct SRPair {
  Raster lr;
  Raster hr;
};

struct SRTrainResult {
  SuperResolver model;
  double initial_val_rec = 0.0;
  std::vector<SREpoch> history;
  /// Held-out (degraded, reference) pairs the validation loss is measured on.
  std::vector<SRPair> validation;
};

inline double validation_rec(const SuperResolver& model, std::span<const SRPair> val) {
  if (val.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& p : val) acc += sr_rec_loss(p.hr, model.sr_forward(p.lr));
  return acc / static_cast<double>(val.size());
}

/// Trains on HR tiles, synthesizing LR inputs with `deg` (fresh degradation
/// draw per sample and epoch). Reproducible for fixed seeds.
inline SRTrainResult train_sr(std::span<const Raster> hr_tiles, const DegradationConfig& deg,
                              const SRTrainConfig& cfg, SRConfig arch = {}) {
  if (hr_tiles.empty()) throw InvalidArgument("train_sr: empty dataset");
  arch.scale = deg.scale;
  arch.channels = hr_tiles.front().channels();
  arch.discriminator.in_channels = arch.channels;
  SRTrainResult result{SuperResolver(arch, cfg.base.seed), 0.0, {}, {}};
  SuperResolver& model = result.model;
  for (const auto& t : hr_tiles) {
    if (t.width() % deg.scale != 0 || t.height() % deg.scale != 0) {
      throw DimensionMismatch("train_sr: tile dims must be divisible by the scale");
    }
    if (t.channels() != arch.channels || t.layout() == ChannelLayout::Lab) {
      throw ChannelMismatch("train_sr: tiles must share one RGB or L layout");
    }
  }

  nn::Rng rng(nn::mix_seed(cfg.base.seed, 11));
  std::vector<std::size_t> order(hr_tiles.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.base.val_fraction * hr_tiles.size()));
  if (hr_tiles.size() < 2) n_val = 0;
  for (std::size_t i = 0; i < n_val; ++i) {
    DegradationConfig d = deg;
    d.seed = nn::mix_seed(deg.seed, 1'000'000 + order[i]);
    result.validation.push_back({degrade(hr_tiles[order[i]], d), hr_tiles[order[i]]});
  }
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  std::vector<nn::Tensor> targets;
  targets.reserve(hr_tiles.size());
  for (const auto& t : hr_tiles) targets.push_back(model.to_tensor(t));
  std::vector<nn::Tensor> inputs(hr_tiles.size());

  nn::Adam gen_opt({cfg.base.learning_rate, cfg.base.beta1, 0.999, 1e-8, 0.0});
  nn::Adam disc_opt({cfg.base.learning_rate, cfg.base.beta1, 0.999, 1e-8, 0.0});
  const AdversarialWeights weights{cfg.lambda_adv, cfg.lambda_rec, cfg.relativistic};
  result.initial_val_rec = validation_rec(model, result.validation);

  auto forward = [&](nn::Tape& t, std::size_t i) { return model.generate(t, t.input(inputs[i])); };

  const std::size_t batch = static_cast<std::size_t>(std::max(1, cfg.base.batch_size));
  for (int epoch = 0; epoch < cfg.base.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    for (std::size_t i : train) {
      DegradationConfig d = deg;
      d.seed = nn::mix_seed(deg.seed, static_cast<std::uint64_t>(epoch) * hr_tiles.size() + i);
      inputs[i] = model.to_tensor(degrade(hr_tiles[i], d));
    }
    SREpoch rec{epoch, 0, 0, 0, 0};
    int steps = 0;
    for (std::size_t s = 0; s < train.size(); s += batch) {
      const std::span<const std::size_t> b(train.data() + s, std::min(batch, train.size() - s));
      const auto st = adversarial_update(b, forward, targets, model.discriminator(),
                                         model.generator_params(), gen_opt, disc_opt, weights);
      rec.d_loss += st.d_loss;
      rec.g_adv += st.g_adv;
      rec.g_rec += st.g_rec;
      ++steps;
    }
    if (steps > 0) {
      rec.d_loss /= steps;
      rec.g_adv /= steps;
      rec.g_rec /= steps;
    }
    rec.val_rec = validation_rec(model, result.validation);
    if (!std::isfinite(rec.g_rec) || !model.generator_params().all_finite()) {
      throw TrainingDiverged("super-resolution training diverged at epoch " + std::to_string(epoch));
    }
    result.history.push_back(rec);
  }
  return result;
}

/// Tiled inference. Each tile is run with a context halo as wide as the
/// generator's receptive radius and cropped back, so tile seams match a
/// whole-image pass.
inline Raster upscale_image(const Raster& img, const SuperResolver& model, int tile) {
  const TileGrid grid = make_tile_grid(img.width(), img.height(), tile, 0);
  const int s = model.scale();
  const int halo = model.receptive_radius();
  std::vector<Tile> out_tiles;
  out_tiles.reserve(grid.offsets.size());
  for (const auto& o : grid.offsets) {
    const int x0 = std::max(0, o.x - halo), y0 = std::max(0, o.y - halo);
    const int x1 = std::min(img.width(), o.x + tile + halo);
    const int y1 = std::min(img.height(), o.y + tile + halo);
    const Raster up = model.sr_forward(crop(img, x0, y0, x1 - x0, y1 - y0));
    out_tiles.push_back({{o.x * s, o.y * s}, crop(up, (o.x - x0) * s, (o.y - y0) * s, tile * s, tile * s)});
  }
  return stitch(out_tiles, scale_grid(grid, s));
}

}  // namespace retroroof::superres
