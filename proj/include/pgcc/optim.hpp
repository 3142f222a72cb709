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

#include <cmath>
#include <cstdint>
#include <vector>

#include "pgcc/encoder.hpp"

namespace pgcc {

/// lr_t = base * 0.5 * (1 + cos(pi * t / total)); constant when total == 0.
inline double cosine_lr(double base_lr, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0) return base_lr;
  const double t = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * t));
}

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// First/second moments laid out like ModelParams.
struct OptimizerState {
  ModelParams m;
  ModelParams v;
  std::int64_t step = 0;

  static OptimizerState for_params(const ModelParams& p) { return {p.zeros_like(), p.zeros_like(), 0}; }
};

/// Decoupled weight decay: p <- p (1 - lr wd), then the bias-corrected
/// adaptive step.
inline void adamw_update(ModelParams& params, const ModelParams& grad, OptimizerState& state, double lr,
                         const AdamWOptions& o) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  std::vector<Mat*> ps, ms, vs;
  std::vector<const Mat*> gs;
  params.for_each_tensor([&](Mat& t) { ps.push_back(&t); });
  state.m.for_each_tensor([&](Mat& t) { ms.push_back(&t); });
  state.v.for_each_tensor([&](Mat& t) { vs.push_back(&t); });
  grad.for_each_tensor([&](const Mat& t) { gs.push_back(&t); });
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Mat& p = *ps[i];
    Mat& m = *ms[i];
    Mat& v = *vs[i];
    const Mat& g = *gs[i];
    m = o.beta1 * m + (1.0 - o.beta1) * g;
    v = o.beta2 * v + (1.0 - o.beta2) * g.cwiseProduct(g);
    if (lr == 0.0) continue;
    p *= (1.0 - lr * o.weight_decay);
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + o.eps);
  }
}

}  // namespace pgcc
