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

// Scaled dot-product attention, softmax(Q K^T / sqrt(d_k)) V, with its
// reverse-mode derivative. Rows of Q/K/V are positions.

#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "retroroof/error.hpp"

namespace retroroof::nn {

template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <class Scalar>
struct AttentionForward {
  Mat<Scalar> output;   // n x d_v
  Mat<Scalar> weights;  // n x m, rows sum to 1
};

template <class Scalar>
AttentionForward<Scalar> attention_forward(const Mat<Scalar>& q, const Mat<Scalar>& k,
                                           const Mat<Scalar>& v) {
  if (q.cols() != k.cols() || k.rows() != v.rows() || q.cols() < 1) {
    throw DimensionMismatch("attention: incompatible Q/K/V shapes");
  }
  const Scalar inv_sqrt_dk = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  AttentionForward<Scalar> r;
  r.weights = (q * k.transpose()) * inv_sqrt_dk;
  for (Eigen::Index i = 0; i < r.weights.rows(); ++i) {
    auto row = r.weights.row(i);
    const Scalar mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
  r.output = r.weights * v;
  return r;
}

template <class Scalar>
struct AttentionGrads {
  Mat<Scalar> dq;
  Mat<Scalar> dk;
  Mat<Scalar> dv;
};

template <class Scalar>
AttentionGrads<Scalar> attention_backward(const Mat<Scalar>& q, const Mat<Scalar>& k,
                                          const Mat<Scalar>& v, const Mat<Scalar>& weights,
                                          const Mat<Scalar>& d_out) {
  const Scalar inv_sqrt_dk = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  AttentionGrads<Scalar> g;
  g.dv.noalias() = weights.transpose() * d_out;
  Mat<Scalar> d_weights = d_out * v.transpose();
  // Softmax Jacobian applied row-wise: dS = A .* (dA - rowsum(dA .* A)).
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots =
      (d_weights.array() * weights.array()).rowwise().sum();
  Mat<Scalar> d_scores = weights.array() * (d_weights.colwise() - dots).array();
  g.dq.noalias() = d_scores * k * inv_sqrt_dk;
  g.dk.noalias() = d_scores.transpose() * q * inv_sqrt_dk;
  return g;
}

}  // namespace retroroof::nn
