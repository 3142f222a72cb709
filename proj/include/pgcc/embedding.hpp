/* Copyright (c) 2026 The pgcc Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

#include <string>

#include "pgcc/common.hpp"

namespace pgcc {

/// Row-wise affine map y = x W + b with W: in x out and b: 1 x out.
struct Affine {
  Mat weight;
  Mat bias;

  Affine() = default;
  Affine(Eigen::Index in, Eigen::Index out) : weight(Mat::Zero(in, out)), bias(Mat::Zero(1, out)) {}

  Eigen::Index in_dim() const { return weight.rows(); }
  Eigen::Index out_dim() const { return weight.cols(); }

  /// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero bias.
  static Affine uniform_init(Eigen::Index in, Eigen::Index out, Rng& rng) {
    Affine a(in, out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index i = 0; i < a.weight.size(); ++i) a.weight.data()[i] = uniform(rng, -bound, bound);
    return a;
  }

  Mat forward(const Mat& x) const {
    if (x.cols() != in_dim())
      throw Error("affine: input width " + std::to_string(x.cols()) + " != " +
                  std::to_string(in_dim()));
    Mat y = x * weight;
    y.rowwise() += bias.row(0);
    return y;
  }

  /// Accumulates parameter gradients into `grad` and returns dL/dx.
  Mat backward(const Mat& x, const Mat& grad_out, Affine& grad) const {
    grad.weight.noalias() += x.transpose() * grad_out;
    grad.bias += grad_out.colwise().sum();
    return grad_out * weight.transpose();
  }

  template <typename F>
  void for_each_tensor(F&& f) {
    f(weight);
    f(bias);
  }
};

/// E_geo, E_color and E_pos: three independent affine maps into the shared
/// embedding space.
struct EmbeddingParams {
  Affine geo;
  Affine color;
  Affine pos;

  Eigen::Index width() const { return geo.out_dim(); }

  static EmbeddingParams init(Eigen::Index width, Rng& rng) {
    return {Affine::uniform_init(3, width, rng), Affine::uniform_init(3, width, rng),
            Affine::uniform_init(1, width, rng)};
  }

  template <typename F>
  void for_each_tensor(F&& f) {
    geo.for_each_tensor(f);
    color.for_each_tensor(f);
    pos.for_each_tensor(f);
  }
};

inline Mat embed_geometry(const Mat& geo01, const EmbeddingParams& p) { return p.geo.forward(geo01); }

inline Mat embed_color(const Mat& color01, const EmbeddingParams& p) { return p.color.forward(color01); }

/// Squared Euclidean norm of each coordinate row, as an N x 1 column.
inline Mat squared_norms(const Mat& geo01) { return geo01.rowwise().squaredNorm(); }

inline Mat embed_position(const Mat& geo01, const EmbeddingParams& p) {
  return p.pos.forward(squared_norms(geo01));
}

inline Mat embed_geometry_backward(const Mat& geo01, const Mat& grad_out, const EmbeddingParams& p,
                                   EmbeddingParams& grad) {
  return p.geo.backward(geo01, grad_out, grad.geo);
}

inline Mat embed_color_backward(const Mat& color01, const Mat& grad_out, const EmbeddingParams& p,
                                EmbeddingParams& grad) {
  return p.color.backward(color01, grad_out, grad.color);
}

/// Returns dL/dgeo01 through the squared norm: 2 x (dL/dnorm2).
inline Mat embed_position_backward(const Mat& geo01, const Mat& grad_out, const EmbeddingParams& p,
                                   EmbeddingParams& grad) {
  const Mat g_norm = p.pos.backward(squared_norms(geo01), grad_out, grad.pos);
  Mat g = 2.0 * geo01;
  g.array().colwise() *= g_norm.col(0).array();
  return g;
}

}  // namespace pgcc
