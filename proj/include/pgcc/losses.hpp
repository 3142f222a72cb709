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

// The four pre-training losses with exact analytic gradients:
//   point-level InfoNCE between geometry and colour features,
//   swapped reconstruction MSE,
//   swapped prediction against Sinkhorn equal-partition targets,
//   object-level InfoNCE between confident per-cluster mean features.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "pgcc/sinkhorn.hpp"

namespace pgcc {

struct Temperatures {
  double contrast = 0.4;
  double cluster = 0.1;
};

struct LossWeights {
  double alpha = 100.0;  // reconstruction
  double beta = 100.0;   // swapped prediction
  double gamma = 1.0;    // object contrast
};

struct LossParts {
  double point_contrast = 0.0;
  double reconstruct = 0.0;
  double cluster = 0.0;
  double object_contrast = 0.0;
};

inline double total_loss(const LossParts& parts, const LossWeights& w = {}) {
  return parts.point_contrast + w.alpha * parts.reconstruct + w.beta * parts.cluster +
         w.gamma * parts.object_contrast;
}

struct ContrastResult {
  double value = 0.0;
  Mat grad_geo;
  Mat grad_color;
};

/// Directional InfoNCE: anchors are rows of `a`, candidates rows of `b`, the
/// positive of a_i is b_i. Sum over anchors, not mean.
inline ContrastResult info_nce(const Mat& a, const Mat& b, double tau) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("info_nce: shape mismatch");
  if (!(tau > 0.0)) throw Error("info_nce: temperature must be positive");
  // Column i holds the logits of anchor i, so each softmax runs over
  // contiguous memory.
  Mat pt = (b * a.transpose()) / tau;
  ContrastResult r;
  for (Eigen::Index i = 0; i < pt.cols(); ++i) {
    auto col = pt.col(i);
    const double m = col.maxCoeff();
    const double positive = col(i);
    col = (col.array() - m).exp().matrix();
    const double s = col.sum();
    r.value += std::log(s) + m - positive;
    col /= s;
  }
  pt.diagonal().array() -= 1.0;  // dL/dlogits = softmax - I, transposed
  r.grad_geo = (pt.transpose() * b) / tau;
  r.grad_color = (pt * a) / tau;
  return r;
}

inline ContrastResult point_contrast_loss(const Mat& z_geo, const Mat& z_color, double tau = 0.4) {
  if (z_geo.rows() < 2) throw Error("point_contrast_loss: need at least 2 points for negatives");
  return info_nce(z_geo, z_color, tau);
}

struct ReconstructResult {
  double value = 0.0;
  double mse_geo = 0.0;
  double mse_color = 0.0;
  Mat grad_geo;    // dL / d predicted coordinates
  Mat grad_color;  // dL / d predicted colours
};

/// (1/N) sum |geo - geo_hat|^2 + (1/N) sum |color - color_hat|^2.
inline ReconstructResult point_reconstruct_loss(const Mat& pred_geo, const Mat& pred_color,
                                                const Mat& geo01, const Mat& color01) {
  const Eigen::Index n = geo01.rows();
  require_shape(pred_geo, n, geo01.cols(), "point_reconstruct_loss: predicted geometry");
  require_shape(pred_color, n, geo01.cols(), "point_reconstruct_loss: predicted colour");
  require_shape(color01, n, geo01.cols(), "point_reconstruct_loss: colour target");
  if (n < 1) throw Error("point_reconstruct_loss: no points");
  ReconstructResult r;
  const Mat dg = pred_geo - geo01;
  const Mat dc = pred_color - color01;
  r.mse_geo = dg.squaredNorm() / n;
  r.mse_color = dc.squaredNorm() / n;
  r.value = r.mse_geo + r.mse_color;
  r.grad_geo = (2.0 / n) * dg;
  r.grad_color = (2.0 / n) * dc;
  return r;
}

enum class TargetMode {
  Sinkhorn,     // equal-partition assignments
  SelfSoftmax,  // ablation: each branch's own detached softmax
};

/// Soft targets for both branches. Treated as constants by every gradient.
struct ClusterTargets {
  Mat q_geo;
  Mat q_color;
};

struct SwappedResult {
  double value = 0.0;
  Mat grad_geo;
  Mat grad_color;
  Mat grad_prototypes;
  Mat p_geo, p_color;  // row-softmax of scores / tau
  ClusterTargets targets;
};

struct SwappedOptions {
  double tau = 0.1;
  double eps = 0.05;
  int iters = 3;
  TargetMode mode = TargetMode::Sinkhorn;
};

inline ClusterTargets compute_targets(const Mat& s_geo, const Mat& s_color, const SwappedOptions& o) {
  if (o.mode == TargetMode::SelfSoftmax)
    return {softmax_rows(s_geo / o.tau), softmax_rows(s_color / o.tau)};
  return {sinkhorn_assign(s_geo, o.eps, o.iters), sinkhorn_assign(s_color, o.eps, o.iters)};
}

/// Swapped prediction on precomputed scores. Fills value, targets,
/// predictions and the score gradients; the feature and prototype
/// gradients are left to swapped_prediction_loss.
struct ScoreGradients {
  Mat geo, color;  // dL / dS per branch
};

inline SwappedResult swapped_prediction_from_scores(const Mat& s_geo, const Mat& s_color, const SwappedOptions& o,
                                                    const ClusterTargets* frozen, ScoreGradients* ds) {
  if (s_geo.rows() != s_color.rows() || s_geo.cols() != s_color.cols())
    throw Error("swapped_prediction_loss: score shape mismatch");
  if (!(o.tau > 0.0)) throw Error("swapped_prediction_loss: temperature must be positive");
  const double b = static_cast<double>(s_geo.rows());
  const double k = static_cast<double>(s_geo.cols());

  SwappedResult r;
  r.targets = frozen ? *frozen : compute_targets(s_geo, s_color, o);
  require_shape(r.targets.q_geo, s_geo.rows(), s_geo.cols(), "swapped_prediction_loss: frozen targets");
  require_shape(r.targets.q_color, s_geo.rows(), s_geo.cols(), "swapped_prediction_loss: frozen targets");
  const Mat logp_geo = log_softmax_rows(s_geo / o.tau);
  const Mat logp_color = log_softmax_rows(s_color / o.tau);
  r.p_geo = logp_geo.array().exp();
  r.p_color = logp_color.array().exp();

  const double scale = -0.5 / (b * k);
  r.value = scale * ((r.targets.q_geo.array() * logp_color.array()).sum() +
                     (r.targets.q_color.array() * logp_geo.array()).sum());
  if (!ds) return r;

  // d/dS of sum_j q_j log p_j = (q - p * sum(q)) / tau, row by row.
  auto dscores = [&](const Mat& q, const Mat& p) {
    Mat d = q;
    const Vec mass = q.rowwise().sum();
    d -= (p.array().colwise() * mass.array()).matrix();
    return Mat(d * (scale / o.tau));
  };
  ds->color = dscores(r.targets.q_geo, r.p_color);
  ds->geo = dscores(r.targets.q_color, r.p_geo);
  return r;
}

/// -0.5 * mean over B x K of [Q_geo * log P_color + Q_color * log P_geo].
/// Gradients reach features and prototypes through P only. Passing `frozen`
/// reuses previously computed targets instead of recomputing them.
inline SwappedResult swapped_prediction_loss(const Mat& z_geo, const Mat& z_color, const Mat& prototypes,
                                             const SwappedOptions& o = {},
                                             const ClusterTargets* frozen = nullptr) {
  if (z_geo.rows() != z_color.rows() || z_geo.cols() != z_color.cols())
    throw Error("swapped_prediction_loss: feature shape mismatch");
  ScoreGradients ds;
  SwappedResult r = swapped_prediction_from_scores(cluster_scores(z_geo, prototypes),
                                                   cluster_scores(z_color, prototypes), o, frozen, &ds);
  r.grad_geo = ds.geo * prototypes.transpose();
  r.grad_color = ds.color * prototypes.transpose();
  r.grad_prototypes = z_geo.transpose() * ds.geo + z_color.transpose() * ds.color;
  return r;
}

/// Per-branch pseudo-labels (argmax, ties to the smaller index) and
/// confidences (max probability) of a row-stochastic prediction.
struct BranchPrediction {
  IndexVec labels;
  Vec confidence;
};

inline BranchPrediction summarize_prediction(const Mat& p) {
  BranchPrediction out;
  out.labels.resize(static_cast<std::size_t>(p.rows()));
  out.confidence.resize(p.rows());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index arg = 0;
    for (Eigen::Index k = 1; k < p.cols(); ++k)
      if (p(i, k) > p(i, arg)) arg = k;
    out.labels[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    out.confidence[i] = p(i, arg);
  }
  return out;
}

/// Which rows feed each pseudo-label's mean feature. Held constant under
/// differentiation.
struct ObjectSelection {
  std::vector<int> shared_labels;            // sorted
  std::vector<std::vector<Eigen::Index>> geo_rows;    // one list per shared label
  std::vector<std::vector<Eigen::Index>> color_rows;
};

/// Rows whose confidence exceeds threshold_scale / K are grouped by
/// pseudo-label; labels that survive in both branches are kept.
inline ObjectSelection select_objects(const Mat& p_geo, const Mat& p_color, double threshold_scale = 2.0) {
  if (p_geo.rows() != p_color.rows() || p_geo.cols() != p_color.cols())
    throw Error("select_objects: prediction shape mismatch");
  const Eigen::Index k = p_geo.cols();
  const double threshold = threshold_scale / static_cast<double>(k);
  auto group = [&](const Mat& p) {
    const BranchPrediction bp = summarize_prediction(p);
    std::vector<std::vector<Eigen::Index>> g(static_cast<std::size_t>(k));
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      if (bp.confidence[i] > threshold) g[static_cast<std::size_t>(bp.labels[static_cast<std::size_t>(i)])].push_back(i);
    return g;
  };
  const auto gg = group(p_geo), gc = group(p_color);
  ObjectSelection sel;
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    if (!gg[ci].empty() && !gc[ci].empty()) {
      sel.shared_labels.push_back(static_cast<int>(c));
      sel.geo_rows.push_back(gg[ci]);
      sel.color_rows.push_back(gc[ci]);
    }
  }
  return sel;
}

struct ObjectContrastResult : ContrastResult {
  int num_objects = 0;  // shared pseudo-labels that entered the loss
};

/// InfoNCE over l2-normalised per-label mean features. Fewer than two shared
/// labels yields zero value and zero gradient.
inline ObjectContrastResult object_contrast_loss(const Mat& z_geo, const Mat& z_color,
                                                 const ObjectSelection& sel, double tau = 0.4) {
  if (z_geo.rows() != z_color.rows() || z_geo.cols() != z_color.cols())
    throw Error("object_contrast_loss: feature shape mismatch");
  ObjectContrastResult r;
  r.grad_geo = Mat::Zero(z_geo.rows(), z_geo.cols());
  r.grad_color = Mat::Zero(z_color.rows(), z_color.cols());
  const Eigen::Index m = static_cast<Eigen::Index>(sel.shared_labels.size());
  r.num_objects = static_cast<int>(m);
  if (m < 2) return r;

  auto means = [&](const Mat& z, const std::vector<std::vector<Eigen::Index>>& rows) {
    Mat out(m, z.cols());
    for (Eigen::Index j = 0; j < m; ++j) {
      RowVec acc = RowVec::Zero(z.cols());
      for (auto i : rows[static_cast<std::size_t>(j)]) acc += z.row(i);
      out.row(j) = acc / static_cast<double>(rows[static_cast<std::size_t>(j)].size());
    }
    return out;
  };
  const Mat mean_geo = means(z_geo, sel.geo_rows);
  const Mat mean_color = means(z_color, sel.color_rows);
  const Mat u_geo = normalize_rows(mean_geo);
  const Mat u_color = normalize_rows(mean_color);
  const ContrastResult c = info_nce(u_geo, u_color, tau);
  r.value = c.value;

  const Mat gm_geo = normalize_rows_backward(mean_geo, u_geo, c.grad_geo);
  const Mat gm_color = normalize_rows_backward(mean_color, u_color, c.grad_color);
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto& rg = sel.geo_rows[static_cast<std::size_t>(j)];
    const auto& rc = sel.color_rows[static_cast<std::size_t>(j)];
    for (auto i : rg) r.grad_geo.row(i) += gm_geo.row(j) / static_cast<double>(rg.size());
    for (auto i : rc) r.grad_color.row(i) += gm_color.row(j) / static_cast<double>(rc.size());
  }
  return r;
}

/// Convenience overload selecting objects from the predictions first.
inline ObjectContrastResult object_contrast_loss(const Mat& z_geo, const Mat& z_color, const Mat& p_geo,
                                                 const Mat& p_color, double threshold_scale = 2.0,
                                                 double tau = 0.4) {
  return object_contrast_loss(z_geo, z_color, select_objects(p_geo, p_color, threshold_scale), tau);
}

/// Entropy (nats) of the batch-mean prediction. log K means perfectly even
/// cluster usage, 0 means total collapse.
inline double cluster_usage_entropy(const Mat& p) {
  const RowVec mean = p.colwise().mean();
  double h = 0.0;
  for (Eigen::Index k = 0; k < mean.size(); ++k)
    if (mean[k] > 0.0) h -= mean[k] * std::log(mean[k]);
  return h;
}

}  // namespace pgcc
