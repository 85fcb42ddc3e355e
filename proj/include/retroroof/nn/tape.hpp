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
 * @file tape.hpp
 * @brief Reverse-mode autodiff over CHW feature maps.
 *
 * Every op appends a node holding its output and, when recording, a closure
 * that pushes the node's gradient to its parents. Parameter gradients are
 * collected per tape and pulled into a ParameterSet with accumulate_into(),
 * so one tape can span networks that are updated separately (generator and
 * discriminator).
 */

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "retroroof/error.hpp"
#include "retroroof/nn/attention.hpp"
#include "retroroof/nn/parameters.hpp"
#include "retroroof/nn/tensor.hpp"

namespace retroroof::nn {

class Tape {
 public:
  using Var = std::size_t;

  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const noexcept { return record_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  Var input(Tensor t, bool requires_grad = false) {
    return push(std::move(t), requires_grad && record_);
  }

  const Tensor& value(Var v) const { return nodes_.at(v).value; }

  /// Gradient accumulated at `v` by backward(); empty if none reached it.
  const Tensor& grad(Var v) const { return nodes_.at(v).grad; }

  /// Adds `g` to the gradient of `v`. Call before backward().
  void seed_grad(Var v, const Tensor& g) {
    auto& n = nodes_.at(v);
    if (!n.value.same_shape(g)) throw DimensionMismatch("seed_grad: shape mismatch");
    Tensor& dst = grad_ref(v);
    for (std::size_t i = 0; i < g.size(); ++i) dst.v[i] += g.v[i];
  }

  void backward() {
    if (!record_) throw Error("backward() on a non-recording tape");
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      auto& n = nodes_[i];
      if (n.back && !n.grad.v.empty()) n.back(*this, i);
    }
  }

  /// Adds this tape's parameter gradients into the matching entries of `ps`.
  void accumulate_into(ParameterSet& ps) const {
    for (auto& p : ps) {
      auto it = param_grads_.find(&p);
      if (it == param_grads_.end()) continue;
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += it->second[i];
    }
  }

  void check_finite(Var v, const std::string& where) const {
    if (!all_finite(nodes_.at(v).value.v)) throw NumericFault("non-finite activation in " + where);
  }

  // -- ops ------------------------------------------------------------------

  Var conv2d(Var xi, const ParameterSet& ps, const Conv2d& s) {
    const Tensor& x = value(xi);
    if (x.c != s.in) {
      throw DimensionMismatch("conv2d: expected " + std::to_string(s.in) + " input channels, got " +
                              std::to_string(x.c));
    }
    const int ho = s.output_size(x.h);
    const int wo = s.output_size(x.w);
    if (ho < 1 || wo < 1) throw DimensionMismatch("conv2d: input smaller than kernel");
    const int kk = s.in * s.kernel * s.kernel;
    const int n = ho * wo;
    const bool direct = s.kernel == 1 && s.stride == 1 && s.pad == 0;
    std::vector<float> col;
    if (!direct) {
      col.resize(static_cast<std::size_t>(kk) * n);
      im2col(x, s, ho, wo, col.data());
    }
    const Parameter* wp = &ps[s.weight];
    const Parameter* bp = s.has_bias ? &ps[s.bias] : nullptr;
    Tensor out(s.out, ho, wo);
    {
      MapRM o(out.data(), s.out, n);
      CMapRM w(wp->value.data(), s.out, kk);
      CMapRM c(direct ? x.data() : col.data(), kk, n);
      o.noalias() = w * c;
      if (bp) {
        Eigen::Map<const Eigen::VectorXf> b(bp->value.data(), s.out);
        o.colwise() += b;
      }
    }
    const Var id = push(std::move(out), record_);
    if (record_) {
      nodes_[id].back = [xi, s, wp, bp, kk, n, ho, wo, direct, col = std::move(col)](Tape& t,
                                                                                     Var self) {
        const Tensor& g = t.nodes_[self].grad;
        CMapRM gm(g.data(), s.out, n);
        CMapRM c(direct ? t.nodes_[xi].value.data() : col.data(), kk, n);
        auto& wg = t.param_grad(wp);
        MapRM(wg.data(), s.out, kk).noalias() += gm * c.transpose();
        if (bp) {
          auto& bg = t.param_grad(bp);
          Eigen::Map<Eigen::VectorXf>(bg.data(), s.out) += gm.rowwise().sum();
        }
        if (!t.nodes_[xi].requires_grad) return;
        CMapRM w(wp->value.data(), s.out, kk);
        Tensor& dx = t.grad_ref(xi);
        if (direct) {
          MapRM(dx.data(), kk, n).noalias() += w.transpose() * gm;
        } else {
          std::vector<float> dcol(static_cast<std::size_t>(kk) * n);
          MapRM(dcol.data(), kk, n).noalias() = w.transpose() * gm;
          col2im(dcol.data(), s, ho, wo, dx);
        }
      };
    }
    return id;
  }

  Var add(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    if (!x.same_shape(y)) throw DimensionMismatch("add: shape mismatch");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += y.v[i];
    const Var id = push(std::move(out), needs(a) || needs(b));
    if (nodes_[id].requires_grad) {
      nodes_[id].back = [a, b](Tape& t, Var self) {
        t.add_grad(a, t.nodes_[self].grad);
        t.add_grad(b, t.nodes_[self].grad);
      };
    }
    return id;
  }

  Var scale(Var a, float s) {
    Tensor out = value(a);
    for (auto& x : out.v) x *= s;
    const Var id = push(std::move(out), needs(a));
    if (nodes_[id].requires_grad) {
      nodes_[id].back = [a, s](Tape& t, Var self) {
        const Tensor& g = t.nodes_[self].grad;
        Tensor& dx = t.grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) dx.v[i] += s * g.v[i];
      };
    }
    return id;
  }

  /// Multiplies by a learnable scalar (shape {1}).
  Var scale_by(Var a, const ParameterSet& ps, std::size_t param) {
    const Parameter* p = &ps[param];
    const float s = p->value[0];
    Tensor out = value(a);
    for (auto& x : out.v) x *= s;
    const Var id = push(std::move(out), record_);
    if (record_) {
      nodes_[id].back = [a, p](Tape& t, Var self) {
        const Tensor& g = t.nodes_[self].grad;
        const Tensor& x = t.nodes_[a].value;
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += static_cast<double>(g.v[i]) * x.v[i];
        t.param_grad(p)[0] += static_cast<float>(acc);
        if (!t.nodes_[a].requires_grad) return;
        Tensor& dx = t.grad_ref(a);
        const float s = p->value[0];
        for (std::size_t i = 0; i < g.size(); ++i) dx.v[i] += s * g.v[i];
      };
    }
    return id;
  }

  /// Normalizes each group of channels of one sample to zero mean and unit
  /// variance, then applies gamma/beta per channel.
  Var group_norm(Var xi, const ParameterSet& ps, const GroupNorm& s) {
    const Tensor& x = value(xi);
    if (x.c != s.channels) throw DimensionMismatch("group_norm: channel count mismatch");
    const Parameter* gp = &ps[s.gamma];
    const Parameter* bp = &ps[s.beta];
    const int cg = s.channels / s.groups;
    const std::size_t plane = x.plane_size(), n = plane * cg;
    Tensor out(x.c, x.h, x.w);
    std::vector<float> xhat(x.size()), inv_std(s.groups);
    for (int g = 0; g < s.groups; ++g) {
      const std::size_t off = static_cast<std::size_t>(g) * n;
      double mean = 0.0, var = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += x.v[off + i];
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) var += (x.v[off + i] - mean) * (x.v[off + i] - mean);
      var /= static_cast<double>(n);
      const double is = 1.0 / std::sqrt(var + s.eps);
      inv_std[g] = static_cast<float>(is);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = off + i;
        const int c = static_cast<int>(k / plane);
        xhat[k] = static_cast<float>((x.v[k] - mean) * is);
        out.v[k] = gp->value[c] * xhat[k] + bp->value[c];
      }
    }
    const Var id = push(std::move(out), record_);
    if (record_) {
      nodes_[id].back = [xi, gp, bp, plane, n, groups = s.groups, xhat = std::move(xhat),
                         inv_std = std::move(inv_std)](Tape& t, Var self) {
        const Tensor& g = t.nodes_[self].grad;
        auto& dgamma = t.param_grad(gp);
        auto& dbeta = t.param_grad(bp);
        for (std::size_t k = 0; k < g.size(); ++k) {
          const std::size_t c = k / plane;
          dgamma[c] += g.v[k] * xhat[k];
          dbeta[c] += g.v[k];
        }
        if (!t.nodes_[xi].requires_grad) return;
        Tensor& dx = t.grad_ref(xi);
        for (int gi = 0; gi < groups; ++gi) {
          const std::size_t off = static_cast<std::size_t>(gi) * n;
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t k = off + i;
            const double dh = static_cast<double>(g.v[k]) * gp->value[k / plane];
            m1 += dh;
            m2 += dh * xhat[k];
          }
          m1 /= static_cast<double>(n);
          m2 /= static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t k = off + i;
            const double dh = static_cast<double>(g.v[k]) * gp->value[k / plane];
            dx.v[k] += static_cast<float>(inv_std[gi] * (dh - m1 - xhat[k] * m2));
          }
        }
      };
    }
    return id;
  }

  Var concat(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    if (x.h != y.h || x.w != y.w) throw DimensionMismatch("concat: spatial mismatch");
    Tensor out(x.c + y.c, x.h, x.w);
    std::copy(x.v.begin(), x.v.end(), out.v.begin());
    std::copy(y.v.begin(), y.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(x.size()));
    const Var id = push(std::move(out), needs(a) || needs(b));
    if (nodes_[id].requires_grad) {
      nodes_[id].back = [a, b](Tape& t, Var self) {
        const Tensor& g = t.nodes_[self].grad;
        const std::size_t na = t.nodes_[a].value.size();
        if (t.nodes_[a].requires_grad) {
          Tensor& da = t.grad_ref(a);
          for (std::size_t i = 0; i < na; ++i) da.v[i] += g.v[i];
        }
        if (t.nodes_[b].requires_grad) {
          Tensor& db = t.grad_ref(b);
          for (std::size_t i = 0; i < db.size(); ++i) db.v[i] += g.v[na + i];
        }
      };
    }
    return id;
  }

  /// Channels [c0, c1).
  Var slice(Var a, int c0, int c1) {
    const Tensor& x = value(a);
    if (c0 < 0 || c1 > x.c || c0 >= c1) throw DimensionMismatch("slice: bad channel range");
    Tensor out(c1 - c0, x.h, x.w);
    const std::size_t off = static_cast<std::size_t>(c0) * x.plane_size();
    std::copy_n(x.v.begin() + static_cast<std::ptrdiff_t>(off), out.size(), out.v.begin());
    const Var id = push(std::move(out), needs(a));
    if (nodes_[id].requires_grad) {
      nodes_[id].back = [a, off](Tape& t, Var self) {
        const Tensor& g = t.nodes_[self].grad;
        Tensor& dx = t.grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) dx.v[off + i] += g.v[i];
      };
    }
    return id;
  }

  Var leaky_relu(Var a, float slope = 0.2f) {
    return pointwise(
        a, [slope](float x) { return x > 0.f ? x : slope * x; },
        [slope](float x, float) { return x > 0.f ? 1.f : slope; });
  }

  Var relu(Var a) {
    return pointwise(
        a, [](float x) { return x > 0.f ? x : 0.f; }, [](float x, float) { return x > 0.f ? 1.f : 0.f; });
  }

  Var silu(Var a) {
    return pointwise(
        a, [](float x) { return x / (1.f + std::exp(-x)); },
        [](float x, float) {
          const float s = 1.f / (1.f + std::exp(-x));
          return s * (1.f + x * (1.f - s));
        });
  }

  Var sigmoid(Var a) {
    return pointwise(
        a, [](float x) { return 1.f / (1.f + std::exp(-x)); }, [](float, float y) { return y * (1.f - y); });
  }

  Var tanh(Var a) {
    return pointwise(
        a, [](float x) { return std::tanh(x); }, [](float, float y) { return 1.f - y * y; });
  }

  Var upsample_nearest(Var a, int factor) {
    const Tensor& x = value(a);
    Tensor out(x.c, x.h * factor, x.w * factor);
    for (int c = 0; c < x.c; ++c)
      for (int y = 0; y < out.h; ++y)
        for (int xx = 0; xx < out.w; ++xx) out.at(c, y, xx) = x.at(c, y / factor, xx / factor);
    const Var id = push(std::move(out), needs(a));
    if (nodes_[id].requires_grad) {
      nodes_[id].back = [a, factor](Tape& t, Var self) {
        const Tensor& g = t.nodes_[self].grad;
        Tensor& dx = t.grad_ref(a);
        for (int c = 0; c < g.c; ++c)
          for (int y = 0; y < g.h; ++y)
            for (int xx = 0; xx < g.w; ++xx) dx.at(c, y / factor, xx / factor) += g.at(c, y, xx);
      };
    }
    return id;
  }

  /// Spatial self-attention: positions are pixels, q/k carry d_k channels and
  /// v carries d_v channels. Output has v's shape.
  Var attention(Var qi, Var ki, Var vi) {
    const Tensor& q = value(qi);
    const Tensor& k = value(ki);
    const Tensor& v = value(vi);
    if (q.c != k.c || !(q.h == k.h && q.w == k.w && k.h == v.h && k.w == v.w)) {
      throw DimensionMismatch("attention: incompatible feature maps");
    }
    const int n = q.h * q.w;
    const Mat<float> qm = positions(q), km = positions(k), vm = positions(v);
    auto fwd = attention_forward<float>(qm, km, vm);
    Tensor out(v.c, v.h, v.w);
    MapRM(out.data(), v.c, n) = fwd.output.transpose();
    const bool req = needs(qi) || needs(ki) || needs(vi);
    const Var id = push(std::move(out), req);
    if (req) {
      nodes_[id].back = [qi, ki, vi, n, weights = std::move(fwd.weights)](Tape& t, Var self) {
        const Tensor& g = t.nodes_[self].grad;
        const Mat<float> dout = CMapRM(g.data(), g.c, n).transpose();
        const auto grads =
            attention_backward<float>(positions(t.nodes_[qi].value), positions(t.nodes_[ki].value),
                                      positions(t.nodes_[vi].value), weights, dout);
        t.add_positions_grad(qi, grads.dq);
        t.add_positions_grad(ki, grads.dk);
        t.add_positions_grad(vi, grads.dv);
      };
    }
    return id;
  }

 private:
  using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapRM = Eigen::Map<MatRM>;
  using CMapRM = Eigen::Map<const MatRM>;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Tape&, Var)> back;
  };

  Var push(Tensor t, bool requires_grad) {
    nodes_.push_back({std::move(t), {}, requires_grad, {}});
    return nodes_.size() - 1;
  }

  bool needs(Var v) const { return record_ && nodes_[v].requires_grad; }

  Tensor& grad_ref(Var v) {
    auto& n = nodes_[v];
    if (n.grad.v.empty()) n.grad = Tensor(n.value.c, n.value.h, n.value.w);
    return n.grad;
  }

  void add_grad(Var v, const Tensor& g) {
    if (!nodes_[v].requires_grad) return;
    Tensor& d = grad_ref(v);
    for (std::size_t i = 0; i < g.size(); ++i) d.v[i] += g.v[i];
  }

  std::vector<float>& param_grad(const Parameter* p) {
    auto& g = param_grads_[p];
    if (g.empty()) g.assign(p->size(), 0.f);
    return g;
  }

  static Mat<float> positions(const Tensor& t) {
    return CMapRM(t.data(), t.c, static_cast<Eigen::Index>(t.plane_size())).transpose();
  }

  void add_positions_grad(Var v, const Mat<float>& d) {
    if (!nodes_[v].requires_grad) return;
    Tensor& g = grad_ref(v);
    MapRM(g.data(), g.c, static_cast<Eigen::Index>(g.plane_size())) += d.transpose();
  }

  template <class F, class D>
  Var pointwise(Var a, F f, D df) {
    Tensor out = value(a);
    for (auto& x : out.v) x = f(x);
    const Var id = push(std::move(out), needs(a));
    if (nodes_[id].requires_grad) {
      nodes_[id].back = [a, df](Tape& t, Var self) {
        const Tensor& g = t.nodes_[self].grad;
        const Tensor& x = t.nodes_[a].value;
        const Tensor& y = t.nodes_[self].value;
        Tensor& dx = t.grad_ref(a);
        for (std::size_t i = 0; i < g.size(); ++i) dx.v[i] += g.v[i] * df(x.v[i], y.v[i]);
      };
    }
    return id;
  }

  static void im2col(const Tensor& x, const Conv2d& s, int ho, int wo, float* col) {
    const int k = s.kernel;
    for (int ci = 0; ci < s.in; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          float* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) *
                                 static_cast<std::size_t>(ho) * wo;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * s.stride + ky - s.pad;
            float* dst = row + static_cast<std::size_t>(oy) * wo;
            if (iy < 0 || iy >= x.h) {
              std::fill_n(dst, wo, 0.f);
              continue;
            }
            const float* src = &x.v[(static_cast<std::size_t>(ci) * x.h + iy) * x.w];
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * s.stride + kx - s.pad;
              dst[ox] = (ix < 0 || ix >= x.w) ? 0.f : src[ix];
            }
          }
        }
  }

  static void col2im(const float* col, const Conv2d& s, int ho, int wo, Tensor& dx) {
    const int k = s.kernel;
    for (int ci = 0; ci < s.in; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const float* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) *
                                       static_cast<std::size_t>(ho) * wo;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * s.stride + ky - s.pad;
            if (iy < 0 || iy >= dx.h) continue;
            const float* src = row + static_cast<std::size_t>(oy) * wo;
            float* dst = &dx.v[(static_cast<std::size_t>(ci) * dx.h + iy) * dx.w];
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * s.stride + kx - s.pad;
              if (ix >= 0 && ix < dx.w) dst[ix] += src[ox];
            }
          }
        }
  }

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::vector<float>> param_grads_;
};

}  // namespace retroroof::nn
