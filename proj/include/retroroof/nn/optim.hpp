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

#pragma once

#include <cmath>

#include "retroroof/nn/parameters.hpp"

namespace retroroof::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip, 0 disables
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const noexcept { return cfg_; }
  long steps() const noexcept { return t_; }

  /// Applies one update from the accumulated gradients (scaled by
  /// `grad_scale`, typically 1/batch) and zeroes them.
  void step(ParameterSet& ps, double grad_scale = 1.0) {
    ++t_;
    double scale = grad_scale;
    if (cfg_.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& p : ps)
        for (float g : p.grad) sq += static_cast<double>(g) * g;
      const double norm = std::sqrt(sq) * grad_scale;
      if (norm > cfg_.clip_norm) scale *= cfg_.clip_norm / norm;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double step = cfg_.learning_rate / bc1;
    for (auto& p : ps) {
      if (p.adam_m.size() != p.size()) {
        p.adam_m.assign(p.size(), 0.f);
        p.adam_v.assign(p.size(), 0.f);
      }
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = p.grad[i] * scale;
        const double m = cfg_.beta1 * p.adam_m[i] + (1.0 - cfg_.beta1) * g;
        const double v = cfg_.beta2 * p.adam_v[i] + (1.0 - cfg_.beta2) * g * g;
        p.adam_m[i] = static_cast<float>(m);
        p.adam_v[i] = static_cast<float>(v);
        p.value[i] -= static_cast<float>(step * m / (std::sqrt(v / bc2) + cfg_.epsilon));
        p.grad[i] = 0.f;
      }
    }
  }

 private:
  AdamConfig cfg_;
  long t_ = 0;
};

}  // namespace retroroof::nn
