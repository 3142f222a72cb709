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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "pgcc/config.hpp"

namespace pgcc {

/// Per-scene point subsets used by the contrastive and clustering terms.
using Subsample = std::vector<std::vector<Eigen::Index>>;

/// Uniform subset of min(N, m) point indices, sorted.
inline std::vector<Eigen::Index> subsample_points(Eigen::Index n, int m, std::uint64_t seed) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  if (n <= m) return idx;
  Rng rng(seed);
  shuffle(idx, rng);
  idx.resize(static_cast<std::size_t>(m));
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline Mat gather_rows(const Mat& m, const std::vector<Eigen::Index>& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

/// Everything held constant while differentiating a batch: the point
/// subsets, the cluster targets and the object selection.
struct FrozenBatch {
  Subsample subsample;
  ClusterTargets targets;
  ObjectSelection selection;
};

struct BatchEval {
  LossParts parts;
  double total = 0.0;
  double entropy = 0.0;
  ModelParams grad;
  FrozenBatch frozen;
  Mat p_geo, p_color;  // batch predictions, subsampled rows concatenated
};

/// Forward and backward over a batch of normalised scenes.
///
/// The point contrast and reconstruction terms are averaged over scenes.
/// Cluster targets, predictions and object means are computed over the
/// concatenation of every scene's subsampled points. When `frozen` is given
/// its subsets, targets and selection are reused verbatim.
inline BatchEval evaluate_batch(const ModelParams& params, const std::vector<NormalizedCloud>& batch,
                                const TrainConfig& cfg, std::uint64_t subsample_seed,
                                const FrozenBatch* frozen = nullptr, bool compute_grad = true) {
  if (batch.empty()) throw Error("evaluate_batch: empty batch");
  const std::size_t s = batch.size();
  const double inv_s = 1.0 / static_cast<double>(s);
  BatchEval out;
  if (frozen) {
    if (frozen->subsample.size() != s) throw Error("evaluate_batch: frozen subsample size mismatch");
    out.frozen.subsample = frozen->subsample;
  } else {
    for (std::size_t i = 0; i < s; ++i)
      out.frozen.subsample.push_back(
          subsample_points(batch[i].geo.rows(), cfg.contrast_samples, mix_seed(subsample_seed, i)));
  }
  const Subsample& sub = out.frozen.subsample;

  std::vector<ForwardPass> passes;
  passes.reserve(s);
  std::vector<Mat> zg_sub(s), zc_sub(s);
  std::vector<ReconstructResult> recon(s);
  std::vector<ContrastResult> contrast(s);
  Eigen::Index total_rows = 0;
  for (std::size_t i = 0; i < s; ++i) {
    passes.push_back(forward_pair(batch[i], params));
    const auto& f = passes.back().features;
    zg_sub[i] = gather_rows(f.z_geo, sub[i]);
    zc_sub[i] = gather_rows(f.z_color, sub[i]);
    total_rows += zg_sub[i].rows();
    if (cfg.point_contrast_weight > 0.0) {
      contrast[i] = point_contrast_loss(zg_sub[i], zc_sub[i], cfg.temperatures.contrast);
      out.parts.point_contrast += inv_s * contrast[i].value;
    }
    recon[i] = point_reconstruct_loss(passes.back().recon.geo, passes.back().recon.color, batch[i].geo,
                                      batch[i].color);
    out.parts.reconstruct += inv_s * recon[i].value;
  }

  Mat zg(total_rows, params.prototypes.rows()), zc(total_rows, params.prototypes.rows());
  {
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < s; ++i) {
      zg.middleRows(r, zg_sub[i].rows()) = zg_sub[i];
      zc.middleRows(r, zc_sub[i].rows()) = zc_sub[i];
      r += zg_sub[i].rows();
    }
  }
  const SwappedResult clu =
      swapped_prediction_loss(zg, zc, params.prototypes, cfg.swapped(), frozen ? &frozen->targets : nullptr);
  out.parts.cluster = clu.value;
  out.frozen.targets = clu.targets;
  out.p_geo = clu.p_geo;
  out.p_color = clu.p_color;
  {
    Mat both(2 * total_rows, clu.p_geo.cols());
    both << clu.p_geo, clu.p_color;
    out.entropy = cluster_usage_entropy(both);
  }

  out.frozen.selection = frozen ? frozen->selection : select_objects(clu.p_geo, clu.p_color, cfg.threshold_scale);
  const ObjectContrastResult obj = object_contrast_loss(zg, zc, out.frozen.selection, cfg.temperatures.contrast);
  out.parts.object_contrast = obj.value;

  const struct {
    const char* name;
    double value;
  } terms[] = {{"L_pc (point contrast)", out.parts.point_contrast},
               {"L_pr (reconstruction)", out.parts.reconstruct},
               {"L_clu (swapped prediction)", out.parts.cluster},
               {"L_oc (object contrast)", out.parts.object_contrast}};
  for (const auto& t : terms)
    if (!std::isfinite(t.value)) throw NumericError(std::string("non-finite loss term ") + t.name);

  LossWeights w = cfg.weights;
  out.total = total_loss({cfg.point_contrast_weight * out.parts.point_contrast, out.parts.reconstruct,
                          out.parts.cluster, out.parts.object_contrast},
                         w);
  if (!compute_grad) return out;

  out.grad = params.zeros_like();
  out.grad.prototypes = w.beta * clu.grad_prototypes;
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < s; ++i) {
    const Eigen::Index m = zg_sub[i].rows();
    Mat gzg_sub = w.beta * clu.grad_geo.middleRows(r, m) + w.gamma * obj.grad_geo.middleRows(r, m);
    Mat gzc_sub = w.beta * clu.grad_color.middleRows(r, m) + w.gamma * obj.grad_color.middleRows(r, m);
    if (cfg.point_contrast_weight > 0.0) {
      gzg_sub += (cfg.point_contrast_weight * inv_s) * contrast[i].grad_geo;
      gzc_sub += (cfg.point_contrast_weight * inv_s) * contrast[i].grad_color;
    }
    r += m;
    const Eigen::Index n = batch[i].geo.rows();
    PairGradients g;
    g.z_geo = Mat::Zero(n, zg.cols());
    g.z_color = Mat::Zero(n, zc.cols());
    for (Eigen::Index j = 0; j < m; ++j) {
      g.z_geo.row(sub[i][static_cast<std::size_t>(j)]) += gzg_sub.row(j);
      g.z_color.row(sub[i][static_cast<std::size_t>(j)]) += gzc_sub.row(j);
    }
    g.recon_geo = (w.alpha * inv_s) * recon[i].grad_geo;
    g.recon_color = (w.alpha * inv_s) * recon[i].grad_color;
    backward_pair(batch[i], params, passes[i], g, out.grad);
  }
  return out;
}

struct TrainRecord {
  std::int64_t step = 0;
  double lr = 0.0;
  LossParts parts;
  double total = 0.0;
  double entropy = 0.0;
};

using TrainLog = std::vector<TrainRecord>;

inline const char* train_log_header() { return "step,lr,L_pc,L_pr,L_clu,L_oc,total,entropy"; }

inline std::string to_csv_row(const TrainRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                static_cast<long long>(r.step), r.lr, r.parts.point_contrast, r.parts.reconstruct,
                r.parts.cluster, r.parts.object_contrast, r.total, r.entropy);
  return buf;
}

inline void write_train_log(const TrainLog& log, std::ostream& out) {
  out << train_log_header() << "\n";
  for (const auto& r : log) out << to_csv_row(r) << "\n";
}

inline void save_train_log(const TrainLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  write_train_log(log, out);
  if (!out) throw Error("write failed for " + path.string());
}

/// Parses a log written by write_train_log. At least one data row is
/// required; errors name the offending line.
inline TrainLog read_train_log(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  TrainLog log;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line != train_log_header())
        throw ParseError(source, lineno, std::string("expected header '") + train_log_header() + "'");
      header = true;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (cells.size() != 8)
      throw ParseError(source, lineno, "expected 8 columns, found " + std::to_string(cells.size()));
    TrainRecord r;
    try {
      r.step = detail::parse_int(cells[0]);
      double* fields[] = {&r.lr, &r.parts.point_contrast, &r.parts.reconstruct, &r.parts.cluster,
                          &r.parts.object_contrast, &r.total, &r.entropy};
      for (int k = 0; k < 7; ++k) *fields[k] = detail::parse_double(cells[static_cast<std::size_t>(k + 1)]);
    } catch (const std::exception&) {
      throw ParseError(source, lineno, "malformed number");
    }
    if (!log.empty() && r.step <= log.back().step)
      throw ParseError(source, lineno, "steps must increase");
    log.push_back(r);
  }
  if (!header) throw ParseError(source, lineno, "empty log");
  if (log.empty()) throw ParseError(source, lineno, "log has a header but no rows");
  return log;
}

inline TrainLog load_train_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return read_train_log(in, path.string());
}

struct TrainState {
  ModelParams params;
  OptimizerState opt;
  TrainLog log;

  static TrainState init(const TrainConfig& cfg) {
    TrainState s;
    s.params = ModelParams::init(cfg.shape, cfg.seed);
    s.opt = OptimizerState::for_params(s.params);
    return s;
  }
};

/// One optimisation step: batch loss and gradient, AdamW at the cosine
/// learning rate for `step` of `total_steps`, then prototype
/// renormalisation.
inline TrainRecord train_step(TrainState& state, const std::vector<NormalizedCloud>& batch,
                              const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps) {
  if (batch.empty()) throw InputError("train_step: empty batch");
  const BatchEval ev =
      evaluate_batch(state.params, batch, cfg, mix_seed(cfg.seed, 0x5b000000ULL + static_cast<std::uint64_t>(step)));
  TrainRecord rec;
  rec.step = step;
  rec.lr = cosine_lr(cfg.learning_rate, step, total_steps);
  rec.parts = ev.parts;
  rec.total = ev.total;
  rec.entropy = ev.entropy;
  adamw_update(state.params, ev.grad, state.opt, rec.lr, cfg.adamw());
  state.params.normalize_prototypes();
  state.log.push_back(rec);
  return rec;
}

/// Runs `cfg.epochs` epochs over `scenes`. Scene order is reshuffled every
/// epoch and augmentation is drawn per (epoch, scene); both are seeded from
/// cfg.seed, so the run is bitwise reproducible.
inline TrainState pretrain(const TrainConfig& cfg, const std::vector<LabeledPointCloud>& scenes,
                           const std::function<void(const TrainRecord&)>& on_step = {}) {
  validate(cfg);
  if (scenes.empty()) throw InputError("pretrain: no scenes");
  TrainState state = TrainState::init(cfg);
  const std::int64_t per_epoch =
      (static_cast<std::int64_t>(scenes.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total = per_epoch * cfg.epochs;
  const bool augmenting = cfg.augment.max_rotation_z > 0.0 || cfg.augment.jitter_sd > 0.0 ||
                          cfg.augment.color_jitter_sd > 0.0 || cfg.augment.flip_prob > 0.0;
  std::vector<NormalizedCloud> plain;
  if (!augmenting)
    for (const auto& sc : scenes) plain.push_back(normalize_scene(sc));

  std::vector<std::size_t> order(scenes.size());
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(cfg.seed, 0xe0000000ULL + static_cast<std::uint64_t>(epoch)));
    shuffle(order, rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<NormalizedCloud> batch;
      for (std::size_t j = start; j < std::min(order.size(), start + cfg.batch_size); ++j) {
        const std::size_t idx = order[j];
        if (augmenting) {
          const std::uint64_t aseed = mix_seed(cfg.seed, (static_cast<std::uint64_t>(epoch) << 32) + idx);
          batch.push_back(normalize_scene(augment(scenes[idx], cfg.augment, aseed)));
        } else {
          batch.push_back(plain[idx]);
        }
      }
      const TrainRecord rec = train_step(state, batch, cfg, step, total);
      if (on_step) on_step(rec);
      ++step;
    }
  }
  return state;
}

/// Loads every `*.pgcc` cloud of a directory, in name order.
inline std::vector<LabeledPointCloud> load_dataset(const std::filesystem::path& dir) {
  const auto files = list_clouds(dir);
  if (files.empty()) throw InputError("no .pgcc files in " + dir.string());
  std::vector<LabeledPointCloud> out;
  for (const auto& f : files) out.push_back(load_cloud(f));
  return out;
}

}  // namespace pgcc
