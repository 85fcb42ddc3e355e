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
 * @file colorize.hpp
 * @brief Luminance-to-chrominance colorization.
 *
 * A residual U-Net with a spatial self-attention block predicts the a/b
 * channels of CIELAB from L; the input L is kept verbatim and merged with the
 * prediction. Training alternates a patch discriminator update with a
 * generator update on adversarial + L1 loss.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "retroroof/error.hpp"
#include "retroroof/gan.hpp"
#include "retroroof/imagery.hpp"
#include "retroroof/nn/attention.hpp"
#include "retroroof/nn/checkpoint.hpp"
#include "retroroof/nn/optim.hpp"
#include "retroroof/nn/tape.hpp"
#include "retroroof/train_config.hpp"

namespace retroroof::colorize {

/// Predicted a/b channels, values in [-128, 128].
struct ChromaMap {
  int width = 0;
  int height = 0;
  std::vector<double> a;
  std::vector<double> b;
};

/// softmax(Q K^T / sqrt(d_k)) V for row-per-position matrices.
inline Eigen::MatrixXd self_attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                                      const Eigen::MatrixXd& v) {
  if (!q.allFinite() || !k.allFinite() || !v.allFinite()) {
    throw NumericFault("self_attention: non-finite input");
  }
  return nn::attention_forward<double>(q, k, v).output;
}

/// [I_L, ab] as a LAB raster. The L channel is copied bit-for-bit.
inline Raster merge_luminance_chroma(const Raster& luminance, const ChromaMap& ab) {
  require_layout(luminance, ChannelLayout::Luminance, "merge_luminance_chroma");
  if (ab.width != luminance.width() || ab.height != luminance.height() ||
      ab.a.size() != luminance.pixel_count() || ab.b.size() != luminance.pixel_count()) {
    throw DimensionMismatch("merge_luminance_chroma: chroma map does not match luminance dims");
  }
  Raster out(luminance.width(), luminance.height(), ChannelLayout::Lab);
  std::copy(luminance.plane(0).begin(), luminance.plane(0).end(), out.plane(0).begin());
  std::copy(ab.a.begin(), ab.a.end(), out.plane(1).begin());
  std::copy(ab.b.begin(), ab.b.end(), out.plane(2).begin());
  return out;
}

inline ChromaMap extract_chroma(const Raster& lab) {
  require_layout(lab, ChannelLayout::Lab, "extract_chroma");
  ChromaMap m{lab.width(), lab.height(), {}, {}};
  m.a.assign(lab.plane(1).begin(), lab.plane(1).end());
  m.b.assign(lab.plane(2).begin(), lab.plane(2).end());
  return m;
}

struct ColorizerConfig {
  int base_width = 16;
  /// Residual blocks per encoder stage; the stage count is the U-Net depth.
  std::vector<int> blocks_per_stage = {1, 1, 1, 1};
  /// Encoder stage whose output passes through self-attention; -1 selects
  /// the stage just above the bottleneck.
  int attention_stage = -1;
  PatchDiscriminatorConfig discriminator{3, 16, 4, {2, 1, 1}, 8};

  int depth() const noexcept { return static_cast<int>(blocks_per_stage.size()); }
  int resolved_attention_stage() const noexcept {
    return attention_stage >= 0 ? attention_stage : std::max(0, depth() - 2);
  }

  /// Small network that trains in minutes on a CPU.
  static ColorizerConfig toy() { return {}; }

  /// 34-layer residual encoder layout with a 70x70 discriminator.
  static ColorizerConfig full() {
    ColorizerConfig c;
    c.base_width = 64;
    c.blocks_per_stage = {3, 4, 6, 3};
    c.discriminator = {3, 64, 4, {2, 2, 2, 1, 1}, 8};
    return c;
  }
};

inline void to_json(nlohmann::json& j, const ColorizerConfig& c) {
  j = {{"base_width", c.base_width},
       {"blocks_per_stage", c.blocks_per_stage},
       {"attention_stage", c.attention_stage},
       {"discriminator", c.discriminator}};
}

inline void from_json(const nlohmann::json& j, ColorizerConfig& c) {
  c.base_width = j.at("base_width");
  c.blocks_per_stage = j.at("blocks_per_stage").get<std::vector<int>>();
  c.attention_stage = j.at("attention_stage");
  c.discriminator = j.at("discriminator").get<PatchDiscriminatorConfig>();
}

struct ResidualBlock {
  nn::Conv2d conv1;
  nn::Conv2d conv2;
};

struct AttentionBlock {
  nn::Conv2d query;
  nn::Conv2d key;
  nn::Conv2d value;
  std::size_t gamma = 0;
  int key_dim = 1;
};

/// Generator and discriminator parameters plus the architecture that reads them.
class Colorizer {
 public:
  Colorizer() = default;

  Colorizer(const ColorizerConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), seed_(seed), disc_(cfg.discriminator, nn::mix_seed(seed, 1)) {
    if (cfg.depth() < 1) throw InvalidArgument("colorizer needs at least one encoder stage");
    if (cfg.discriminator.in_channels != 3) {
      throw InvalidArgument("colorizer discriminator consumes LAB (3 channels)");
    }
    nn::Rng rng(nn::mix_seed(seed, 0));
    auto& ps = gen_;
    stem_ = nn::make_conv(ps, "gen.stem", 1, cfg.base_width, 3, 1, 1, rng);
    int prev = cfg.base_width;
    for (int s = 0; s < cfg.depth(); ++s) {
      const int width = stage_width(s);
      const std::string name = "gen.enc" + std::to_string(s);
      down_.push_back(nn::make_conv(ps, name + ".down", prev, width, 3, 2, 1, rng));
      std::vector<ResidualBlock> blocks;
      for (int b = 0; b < cfg.blocks_per_stage[static_cast<std::size_t>(s)]; ++b) {
        const std::string bn = name + ".res" + std::to_string(b);
        blocks.push_back({nn::make_conv(ps, bn + ".conv1", width, width, 3, 1, 1, rng),
                          nn::make_conv(ps, bn + ".conv2", width, width, 3, 1, 1, rng, nn::Init::He,
                                        true, 0.5f)});
      }
      res_.push_back(std::move(blocks));
      if (s == cfg.resolved_attention_stage()) {
        attn_.key_dim = std::max(1, width / 8);
        attn_.query = nn::make_conv(ps, name + ".attn.q", width, attn_.key_dim, 1, 1, 0, rng);
        attn_.key = nn::make_conv(ps, name + ".attn.k", width, attn_.key_dim, 1, 1, 0, rng);
        attn_.value = nn::make_conv(ps, name + ".attn.v", width, width, 1, 1, 0, rng);
        attn_.gamma = ps.add(name + ".attn.gamma", {1}, {0.f});
      }
      prev = width;
    }
    for (int s = cfg.depth() - 1; s >= 0; --s) {
      const int width = stage_width(s);
      const int skip = s == 0 ? cfg.base_width : stage_width(s - 1);
      const std::string name = "gen.dec" + std::to_string(s);
      up_.push_back(nn::make_conv(ps, name + ".up", width, skip, 3, 1, 1, rng));
      fuse_.push_back(nn::make_conv(ps, name + ".fuse", 2 * skip, skip, 3, 1, 1, rng));
    }
    head_ = nn::make_conv(ps, "gen.head", cfg.base_width, 2, 3, 1, 1, rng, nn::Init::Zero);
  }

  const ColorizerConfig& config() const noexcept { return cfg_; }
  std::uint64_t seed() const noexcept { return seed_; }
  nn::ParameterSet& generator_params() noexcept { return gen_; }
  const nn::ParameterSet& generator_params() const noexcept { return gen_; }
  PatchDiscriminator& discriminator() noexcept { return disc_; }
  const PatchDiscriminator& discriminator() const noexcept { return disc_; }
  int size_multiple() const noexcept { return 1 << cfg_.depth(); }

  /// Builds the generator graph. Input: normalized luminance (L/50 - 1),
  /// dims divisible by size_multiple(). Output: tanh(ab / 128 scale), two
  /// channels.
  nn::Tape::Var generate(nn::Tape& t, nn::Tape::Var x) const {
    const auto& in = t.value(x);
    if (in.h % size_multiple() != 0 || in.w % size_multiple() != 0) {
      throw DimensionMismatch("colorizer generator: dims must be multiples of " +
                              std::to_string(size_multiple()));
    }
    x = t.leaky_relu(t.conv2d(x, gen_, stem_));
    std::vector<nn::Tape::Var> skips{x};
    for (int s = 0; s < cfg_.depth(); ++s) {
      x = t.leaky_relu(t.conv2d(x, gen_, down_[static_cast<std::size_t>(s)]));
      for (const auto& blk : res_[static_cast<std::size_t>(s)]) {
        auto h = t.leaky_relu(t.conv2d(x, gen_, blk.conv1));
        h = t.conv2d(h, gen_, blk.conv2);
        x = t.leaky_relu(t.add(x, h));
      }
      if (s == cfg_.resolved_attention_stage()) {
        const auto q = t.conv2d(x, gen_, attn_.query);
        const auto k = t.conv2d(x, gen_, attn_.key);
        const auto v = t.conv2d(x, gen_, attn_.value);
        x = t.add(x, t.scale_by(t.attention(q, k, v), gen_, attn_.gamma));
      }
      if (s + 1 < cfg_.depth()) skips.push_back(x);
    }
    for (std::size_t d = 0; d < up_.size(); ++d) {
      x = t.upsample_nearest(x, 2);
      x = t.leaky_relu(t.conv2d(x, gen_, up_[d]));
      x = t.concat(x, skips[skips.size() - 1 - d]);
      x = t.leaky_relu(t.conv2d(x, gen_, fuse_[d]));
    }
    return t.tanh(t.conv2d(x, gen_, head_));
  }

  /// Inference: I_ab = G(I_L). Deterministic for fixed parameters.
  ChromaMap generator_forward(const Raster& luminance) const {
    require_layout(luminance, ChannelLayout::Luminance, "generator_forward");
    const nn::Tensor in = nn::replicate_pad_to_multiple(nn::to_tensor(luminance, 1.0 / 50.0, -1.0),
                                                        size_multiple());
    nn::Tape t(false);
    const auto out = generate(t, t.input(in));
    t.check_finite(out, "colorizer generator");
    const auto& ab = t.value(out);
    ChromaMap m{luminance.width(), luminance.height(), {}, {}};
    m.a.resize(luminance.pixel_count());
    m.b.resize(luminance.pixel_count());
    for (int y = 0; y < luminance.height(); ++y)
      for (int x = 0; x < luminance.width(); ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * luminance.width() + x;
        m.a[i] = 128.0 * static_cast<double>(ab.at(0, y, x));
        m.b[i] = 128.0 * static_cast<double>(ab.at(1, y, x));
      }
    return m;
  }

  /// Patch realism map for a LAB or RGB image.
  PatchMap discriminator_forward(const Raster& image) const {
    if (image.layout() == ChannelLayout::Luminance) {
      throw ChannelMismatch("discriminator_forward: expected LAB or RGB input");
    }
    const Raster lab = image.layout() == ChannelLayout::Lab ? image : rgb_to_lab(image);
    return disc_.forward(to_discriminator_space(lab));
  }

  /// LAB -> (L/50 - 1, a/128, b/128).
  static nn::Tensor to_discriminator_space(const Raster& lab) {
    require_layout(lab, ChannelLayout::Lab, "to_discriminator_space");
    nn::Tensor t(3, lab.height(), lab.width());
    const std::size_t n = lab.pixel_count();
    for (std::size_t i = 0; i < n; ++i) {
      t.v[i] = static_cast<float>(lab.plane(0)[i] / 50.0 - 1.0);
      t.v[n + i] = static_cast<float>(lab.plane(1)[i] / 128.0);
      t.v[2 * n + i] = static_cast<float>(lab.plane(2)[i] / 128.0);
    }
    return t;
  }

  void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const {
    nn::ParameterSet all = gen_;
    for (const auto& p : disc_.params()) all.add(p.name, p.shape, p.value);
    save_checkpoint(path, "colorizer", cfg_, seed_, all, extra);
  }

  static Colorizer load(const std::filesystem::path& path) {
    const auto ck = nn::load_checkpoint(path);
    if (ck.kind != "colorizer") throw ValidationError(path.string() + ": not a colorizer checkpoint");
    Colorizer c(ck.config.get<ColorizerConfig>(), ck.seed);
    if (ck.params.size() != c.gen_.size() + c.disc_.params().size()) {
      throw ValidationError(path.string() + ": parameter count does not match architecture");
    }
    nn::ParameterSet gen, disc;
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
      const auto& p = ck.params[i];
      (i < c.gen_.size() ? gen : disc).add(p.name, p.shape, p.value);
    }
    c.gen_.load_values(gen);
    c.disc_.params().load_values(disc);
    return c;
  }

 private:
  int stage_width(int s) const noexcept { return cfg_.base_width * (1 << std::min(s + 1, 3)); }

  ColorizerConfig cfg_;
  std::uint64_t seed_ = 0;
  nn::ParameterSet gen_;
  PatchDiscriminator disc_;
  nn::Conv2d stem_;
  std::vector<nn::Conv2d> down_;
  std::vector<std::vector<ResidualBlock>> res_;
  AttentionBlock attn_;
  std::vector<nn::Conv2d> up_;
  std::vector<nn::Conv2d> fuse_;
  nn::Conv2d head_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct ColorizerTrainConfig {
  TrainConfig base{5, 8, 1e-3, 0.5, 0, 0.125, false};
  double lambda_adv = 1.0;
  double lambda_l1 = 100.0;
  bool relativistic = false;
};

inline void to_json(nlohmann::json& j, const ColorizerTrainConfig& c) {
  j = {{"base", c.base}, {"lambda_adv", c.lambda_adv}, {"lambda_l1", c.lambda_l1}, {"relativistic", c.relativistic}};
}

inline void from_json(const nlohmann::json& j, ColorizerTrainConfig& c) {
  c = ColorizerTrainConfig{};
  if (j.contains("base")) from_json(j.at("base"), c.base);
  c.lambda_adv = j.value("lambda_adv", c.lambda_adv);
  c.lambda_l1 = j.value("lambda_l1", c.lambda_l1);
  c.relativistic = j.value("relativistic", c.relativistic);
}

struct ColorizerEpoch {
  int epoch = 0;
  double d_loss = 0.0;
  double g_adv = 0.0;
  double g_l1 = 0.0;
  double val_l1 = 0.0;
};

struct ColorizerTrainResult {
  Colorizer model;
  double initial_val_l1 = 0.0;
  std::vector<ColorizerEpoch> history;
};

struct ColorPair {
  Raster gray;   // Luminance, L in [0,100]
  Raster color;  // RGB in [0,1]
};

namespace detail {

struct PreparedPair {
  nn::Tensor input;   // normalized L, padded
  nn::Tensor target;  // discriminator space, padded
};

inline PreparedPair prepare_pair(const ColorPair& p, int multiple) {
  require_layout(p.gray, ChannelLayout::Luminance, "train_colorizer");
  require_layout(p.color, ChannelLayout::Rgb, "train_colorizer");
  require_same_dims(p.gray, p.color, "train_colorizer");
  if (p.gray.width() % multiple != 0 || p.gray.height() % multiple != 0) {
    throw DimensionMismatch("train_colorizer: tile dims must be multiples of " +
                            std::to_string(multiple));
  }
  Raster lab = rgb_to_lab(p.color);
  // The generator keeps the input luminance, so the target carries it too.
  std::copy(p.gray.plane(0).begin(), p.gray.plane(0).end(), lab.plane(0).begin());
  return {nn::to_tensor(p.gray, 1.0 / 50.0, -1.0), Colorizer::to_discriminator_space(lab)};
}

inline double validation_l1(const Colorizer& model, std::span<const PreparedPair> val) {
  if (val.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& p : val) {
    nn::Tape t(false);
    const auto x = t.input(p.input);
    const auto fake = t.concat(x, model.generate(t, x));
    acc += l1_loss<float>(p.target.v, t.value(fake).v);
  }
  return acc / static_cast<double>(val.size());
}

}  // namespace detail

/// Trains a colorizer on (gray, color) pairs. The loss history is reproducible
/// for a fixed seed.
inline ColorizerTrainResult train_colorizer(std::span<const ColorPair> pairs,
                                            const ColorizerTrainConfig& cfg,
                                            const ColorizerConfig& arch = ColorizerConfig::toy()) {
  if (pairs.empty()) throw InvalidArgument("train_colorizer: empty dataset");
  ColorizerTrainResult result{Colorizer(arch, cfg.base.seed), 0.0, {}};
  Colorizer& model = result.model;
  const int multiple = model.size_multiple();

  std::vector<detail::PreparedPair> data;
  data.reserve(pairs.size());
  for (const auto& p : pairs) data.push_back(detail::prepare_pair(p, multiple));

  nn::Rng rng(nn::mix_seed(cfg.base.seed, 7));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.base.val_fraction * data.size()));
  if (data.size() < 2) n_val = 0;
  std::vector<detail::PreparedPair> val;
  for (std::size_t i = 0; i < n_val; ++i) val.push_back(data[order[i]]);
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  std::vector<nn::Tensor> targets;
  targets.reserve(data.size());
  for (const auto& d : data) targets.push_back(d.target);

  nn::Adam gen_opt({cfg.base.learning_rate, cfg.base.beta1, 0.999, 1e-8, 0.0});
  nn::Adam disc_opt({cfg.base.learning_rate, cfg.base.beta1, 0.999, 1e-8, 0.0});
  const AdversarialWeights weights{cfg.lambda_adv, cfg.lambda_l1, cfg.relativistic};
  result.initial_val_l1 = detail::validation_l1(model, val);

  auto forward = [&](nn::Tape& t, std::size_t i) {
    const auto x = t.input(data[i].input);
    return t.concat(x, model.generate(t, x));
  };

  const std::size_t batch = static_cast<std::size_t>(std::max(1, cfg.base.batch_size));
  for (int epoch = 0; epoch < cfg.base.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    ColorizerEpoch rec{epoch, 0, 0, 0, 0};
    int steps = 0;
    for (std::size_t s = 0; s < train.size(); s += batch) {
      const std::span<const std::size_t> b(train.data() + s, std::min(batch, train.size() - s));
      const auto st = adversarial_update(b, forward, targets, model.discriminator(),
                                         model.generator_params(), gen_opt, disc_opt, weights);
      rec.d_loss += st.d_loss;
      rec.g_adv += st.g_adv;
      rec.g_l1 += st.g_rec;
      ++steps;
    }
    if (steps > 0) {
      rec.d_loss /= steps;
      rec.g_adv /= steps;
      rec.g_l1 /= steps;
    }
    rec.val_l1 = detail::validation_l1(model, val);
    if (!std::isfinite(rec.g_l1) || !std::isfinite(rec.val_l1) || !model.generator_params().all_finite()) {
      throw TrainingDiverged("colorizer diverged at epoch " + std::to_string(epoch));
    }
    result.history.push_back(rec);
  }
  return result;
}

/// Tiled colorization of a luminance image, returned as RGB. Luminance of the
/// LAB intermediate equals the input exactly.
inline Raster colorize_lab(const Raster& gray, const Colorizer& model, int tile, int overlap = 0) {
  require_layout(gray, ChannelLayout::Luminance, "colorize_image");
  const TileGrid grid = make_tile_grid(gray.width(), gray.height(), tile, overlap);
  std::vector<Tile> chroma_tiles;
  chroma_tiles.reserve(grid.offsets.size());
  for (auto& t : cut_tiles(gray, grid)) {
    const ChromaMap ab = model.generator_forward(t.raster);
    Raster lab = merge_luminance_chroma(t.raster, ab);
    chroma_tiles.push_back({t.offset, std::move(lab)});
  }
  Raster lab = stitch(chroma_tiles, grid);
  // Averaging equal luminance values can perturb the last bit; restore it.
  std::copy(gray.plane(0).begin(), gray.plane(0).end(), lab.plane(0).begin());
  return lab;
}

inline Raster colorize_image(const Raster& gray, const Colorizer& model, int tile, int overlap = 0) {
  return lab_to_rgb(colorize_lab(gray, model, tile, overlap));
}

}  // namespace retroroof::colorize
