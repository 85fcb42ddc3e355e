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
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "retroroof/error.hpp"
#include "retroroof/nn/tensor.hpp"

namespace retroroof::nn {

struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;
  std::vector<float> adam_m;
  std::vector<float> adam_v;

  std::size_t size() const noexcept { return value.size(); }
};

/// Flat, ordered store of learnable parameters. Layers refer to entries by
/// index so models stay copyable.
class ParameterSet {
 public:
  std::size_t add(std::string name, std::vector<int> shape, std::vector<float> init) {
    const auto n = static_cast<std::size_t>(
        std::accumulate(shape.begin(), shape.end(), 1, std::multiplies<>{}));
    if (init.size() != n) throw InvalidArgument("parameter '" + name + "': init size mismatch");
    Parameter p;
    p.name = std::move(name);
    p.shape = std::move(shape);
    p.value = std::move(init);
    p.grad.assign(n, 0.f);
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const noexcept { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.f);
  }

  bool all_finite() const {
    for (const auto& p : params_)
      if (!nn::all_finite(p.value)) return false;
    return true;
  }

  /// Copies values from `other`, matching by name and shape.
  void load_values(const ParameterSet& other) {
    if (other.size() != size()) throw ValidationError("parameter count mismatch while loading");
    for (std::size_t i = 0; i < size(); ++i) {
      if (params_[i].name != other[i].name || params_[i].shape != other[i].shape) {
        throw ValidationError("parameter '" + params_[i].name + "' does not match '" +
                              other[i].name + "'");
      }
      params_[i].value = other[i].value;
    }
  }

 private:
  std::vector<Parameter> params_;
};

enum class Init { He, Zero };

struct Conv2d {
  std::size_t weight = 0;
  std::size_t bias = 0;
  int in = 0;
  int out = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  bool has_bias = true;

  int output_size(int n) const noexcept { return (n + 2 * pad - kernel) / stride + 1; }
};

inline Conv2d make_conv(ParameterSet& ps, const std::string& name, int in, int out, int kernel,
                        int stride, int pad, Rng& rng, Init init = Init::He, bool bias = true,
                        float gain = 1.f) {
  Conv2d c;
  c.in = in;
  c.out = out;
  c.kernel = kernel;
  c.stride = stride;
  c.pad = pad;
  c.has_bias = bias;
  const int fan_in = in * kernel * kernel;
  std::vector<float> w(static_cast<std::size_t>(out) * fan_in, 0.f);
  if (init == Init::He) {
    const float bound = gain * std::sqrt(6.f / static_cast<float>(fan_in));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (auto& x : w) x = dist(rng);
  }
  c.weight = ps.add(name + ".weight", {out, in, kernel, kernel}, std::move(w));
  if (bias) c.bias = ps.add(name + ".bias", {out}, std::vector<float>(out, 0.f));
  return c;
}

/// Per-sample group normalization with a learnable per-channel affine.
struct GroupNorm {
  std::size_t gamma = 0;
  std::size_t beta = 0;
  int channels = 0;
  int groups = 1;
  float eps = 1e-5f;
};

inline GroupNorm make_group_norm(ParameterSet& ps, const std::string& name, int channels, int groups) {
  if (groups < 1 || channels % groups != 0) {
    throw InvalidArgument("group norm: " + std::to_string(channels) + " channels do not split into " +
                          std::to_string(groups) + " groups");
  }
  GroupNorm g;
  g.channels = channels;
  g.groups = groups;
  g.gamma = ps.add(name + ".gamma", {channels}, std::vector<float>(channels, 1.f));
  g.beta = ps.add(name + ".beta", {channels}, std::vector<float>(channels, 0.f));
  return g;
}

}  // namespace retroroof::nn
