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

/// S[b,k] = <z_b, c_k> for B x D features and D x K prototypes.
inline Mat cluster_scores(const Mat& z, const Mat& prototypes) {
  if (z.cols() != prototypes.rows())
    throw Error("cluster_scores: feature width " + std::to_string(z.cols()) +
                " != prototype width " + std::to_string(prototypes.rows()));
  return z * prototypes;
}

/// Equal-partition soft assignment of B samples to K clusters by
/// Sinkhorn-Knopp scaling of exp(S / eps).
///
/// The transport matrix is K x B. It is normalised to unit mass, then each
/// round rescales rows (clusters) to marginal 1/K and columns (samples) to
/// marginal 1/B. The result is returned per sample (B x K), each row summing
/// to one. Each sample's scores are shifted by their maximum before
/// exponentiation; the output is therefore exactly invariant to adding a
/// constant to any row of S.
inline Mat sinkhorn_assign(const Mat& scores, double eps = 0.05, int iters = 3) {
  if (!(eps > 0.0)) throw Error("sinkhorn: eps must be positive");
  if (iters < 0) throw Error("sinkhorn: iters must be nonnegative");
  const Eigen::Index b = scores.rows(), k = scores.cols();
  if (b < 1 || k < 1) throw Error("sinkhorn: empty score matrix");

  Mat q(k, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const double m = scores.row(i).maxCoeff();
    q.col(i) = ((scores.row(i).array() - m) / eps).exp().transpose();
  }
  q /= q.sum();
  const double r = 1.0 / static_cast<double>(k);
  const double c = 1.0 / static_cast<double>(b);
  for (int it = 0; it < iters; ++it) {
    const Vec u = q.rowwise().sum();
    // A cluster whose mass underflowed to zero stays at zero.
    q.array().colwise() *= (u.array() > 0.0).select(r / u.array(), 0.0);
    const RowVec v = q.colwise().sum();
    q.array().rowwise() *= (c / v.array());
  }
  const RowVec total = q.colwise().sum();
  q.array().rowwise() /= total.array();
  return q.transpose();
}

}  // namespace pgcc
