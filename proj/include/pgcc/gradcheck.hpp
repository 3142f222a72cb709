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

// End-to-end finite-difference check of every loss term on a tiny random
// model and batch. Cluster targets, point subsets and object selection are
// frozen at the base point, matching how the analytic gradient treats them.

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "pgcc/trainer.hpp"

namespace pgcc {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  int num_scenes = 2;
  int points_per_scene = 8;
  ModelShape shape{8, 16, 3, 8, 8, 4};
  double step = 1e-5;
  double tolerance = 1e-4;
  double threshold_scale = 1.0;  // low enough that tiny random batches keep objects
  std::string corrupt_term;      // test hook: perturbs this term's analytic gradient
};

struct GradcheckEntry {
  std::string term;
  double max_rel_error = 0.0;
  std::size_t num_checked = 0;
  bool passed = false;
  std::string note;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool ok() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
  }
};

inline const std::vector<std::string>& gradcheck_terms() {
  static const std::vector<std::string> t = {"point_contrast", "reconstruct", "cluster", "object_contrast",
                                             "encoder"};
  return t;
}

namespace detail {

inline std::vector<double> flatten(const ModelParams& p) {
  std::vector<double> out;
  p.for_each_tensor([&](const Mat& m) { out.insert(out.end(), m.data(), m.data() + m.size()); });
  return out;
}

/// Smallest |pre-activation| feeding a ReLU anywhere in the batch.
inline double relu_margin(const ModelParams& params, const std::vector<NormalizedCloud>& batch) {
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& c : batch) {
    const ForwardPass fp = forward_pair(c, params);
    for (const EncoderCache* cache : {&fp.enc_geo, &fp.enc_color})
      for (std::size_t l = 0; l + 1 < cache->pre.size(); ++l)
        margin = std::min(margin, cache->pre[l].cwiseAbs().minCoeff());
  }
  return margin;
}

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-3 * max_j |n_j|).
inline double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double scale = 0.0;
  for (double v : numeric) scale = std::max(scale, std::abs(v));
  const double floor = std::max(1e-3 * scale, 1e-300);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

inline std::vector<double> central_differences(ModelParams& params, double h,
                                               const std::function<double(const ModelParams&)>& f) {
  std::vector<Mat*> tensors;
  params.for_each_tensor([&](Mat& m) { tensors.push_back(&m); });
  std::vector<double> out;
  for (Mat* t : tensors) {
    for (Eigen::Index i = 0; i < t->size(); ++i) {
      double& x = t->data()[i];
      const double x0 = x;
      x = x0 + h;
      const double fp = f(params);
      x = x0 - h;
      const double fm = f(params);
      x = x0;
      out.push_back((fp - fm) / (2.0 * h));
    }
  }
  return out;
}

}  // namespace detail

inline GradcheckReport gradcheck(const GradcheckOptions& opt = {}) {
  // Draw instances until none of the ReLU inputs sits near its kink and the
  // object term has at least two shared pseudo-labels to contrast.
  TrainConfig cfg;
  cfg.shape = opt.shape;
  cfg.threshold_scale = opt.threshold_scale;
  cfg.contrast_samples = opt.points_per_scene;
  ModelParams params;
  std::vector<NormalizedCloud> batch;
  FrozenBatch frozen;
  for (std::uint64_t attempt = 0;; ++attempt) {
    if (attempt > 1000) throw Error("gradcheck: could not draw a kink-free instance");
    params = ModelParams::init(opt.shape, mix_seed(opt.seed, attempt));
    Rng rng(mix_seed(opt.seed, 0x9c00 + attempt));
    batch.clear();
    for (int s = 0; s < opt.num_scenes; ++s) {
      NormalizedCloud c{Mat(opt.points_per_scene, 3), Mat(opt.points_per_scene, 3)};
      for (Eigen::Index i = 0; i < c.geo.size(); ++i) c.geo.data()[i] = uniform(rng, 0.0, 1.0);
      for (Eigen::Index i = 0; i < c.color.size(); ++i) c.color.data()[i] = uniform(rng, 0.0, 1.0);
      batch.push_back(std::move(c));
    }
    if (detail::relu_margin(params, batch) < 1e-4) continue;
    frozen = evaluate_batch(params, batch, cfg, opt.seed, nullptr, false).frozen;
    if (opt.shape.num_prototypes >= 2 && frozen.selection.shared_labels.size() < 2) continue;
    break;
  }

  GradcheckReport report;
  for (const std::string& term : gradcheck_terms()) {
    GradcheckEntry e;
    e.term = term;
    std::vector<double> analytic, numeric;
    if (term == "encoder") {
      // Random linear functional of every forward output.
      Rng rng(mix_seed(opt.seed, 0xe4c));
      std::vector<PairGradients> probes;
      for (const auto& c : batch) {
        PairGradients g;
        const Eigen::Index n = c.geo.rows();
        auto rnd = [&](Eigen::Index cols) {
          Mat m(n, cols);
          for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = gaussian(rng);
          return m;
        };
        g.z_geo = rnd(opt.shape.projection_width);
        g.z_color = rnd(opt.shape.projection_width);
        g.recon_geo = rnd(3);
        g.recon_color = rnd(3);
        probes.push_back(std::move(g));
      }
      auto functional = [&](const ModelParams& p) {
        double v = 0.0;
        for (std::size_t s = 0; s < batch.size(); ++s) {
          const ForwardPass fp = forward_pair(batch[s], p);
          v += (probes[s].z_geo.array() * fp.features.z_geo.array()).sum() +
               (probes[s].z_color.array() * fp.features.z_color.array()).sum() +
               (probes[s].recon_geo.array() * fp.recon.geo.array()).sum() +
               (probes[s].recon_color.array() * fp.recon.color.array()).sum();
        }
        return v;
      };
      ModelParams grad = params.zeros_like();
      for (std::size_t s = 0; s < batch.size(); ++s)
        backward_pair(batch[s], params, forward_pair(batch[s], params), probes[s], grad);
      analytic = detail::flatten(grad);
      ModelParams work = params;
      numeric = detail::central_differences(work, opt.step, functional);
    } else {
      TrainConfig c = cfg;
      c.point_contrast_weight = term == "point_contrast" ? 1.0 : 0.0;
      c.weights.alpha = term == "reconstruct" ? 1.0 : 0.0;
      c.weights.beta = term == "cluster" ? 1.0 : 0.0;
      c.weights.gamma = term == "object_contrast" ? 1.0 : 0.0;
      const BatchEval base = evaluate_batch(params, batch, c, opt.seed, &frozen, true);
      analytic = detail::flatten(base.grad);
      ModelParams work = params;
      numeric = detail::central_differences(work, opt.step, [&](const ModelParams& p) {
        return evaluate_batch(p, batch, c, opt.seed, &frozen, false).total;
      });
      const bool all_zero = std::all_of(analytic.begin(), analytic.end(), [](double v) { return v == 0.0; });
      if (term == "cluster" && opt.shape.num_prototypes == 1 && all_zero)
        e.note = "degenerate: K=1, loss identically zero";
      if (term == "object_contrast" && frozen.selection.shared_labels.size() < 2)
        e.note = "degenerate: fewer than two shared pseudo-labels, loss identically zero";
    }
    if (term == opt.corrupt_term) {
      double scale = 0.0;
      for (double v : analytic) scale = std::max(scale, std::abs(v));
      for (double& v : analytic) v = 1.01 * v + 1e-2 * scale;
    }
    e.num_checked = analytic.size();
    e.max_rel_error = detail::max_relative_error(analytic, numeric);
    e.passed = e.max_rel_error < opt.tolerance;
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace pgcc
