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

// Unsupervised segmentation: branch predictions are fused into pseudo-labels,
// matched to ground truth by a maximum-count assignment and scored by mIoU.
// No parameter is modified anywhere in this header.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pgcc/checkpoint.hpp"
#include "pgcc/hungarian.hpp"

namespace pgcc {

/// argmax_k (P_geo + P_color), ties to the smaller index.
inline IndexVec fuse_pseudo_labels(const Mat& p_geo, const Mat& p_color) {
  if (p_geo.rows() != p_color.rows() || p_geo.cols() != p_color.cols())
    throw Error("fuse_pseudo_labels: shape mismatch");
  IndexVec out(static_cast<std::size_t>(p_geo.rows()));
  for (Eigen::Index i = 0; i < p_geo.rows(); ++i) {
    Eigen::Index arg = 0;
    double best = p_geo(i, 0) + p_color(i, 0);
    for (Eigen::Index k = 1; k < p_geo.cols(); ++k) {
      const double s = p_geo(i, k) + p_color(i, k);
      if (s > best) {
        best = s;
        arg = k;
      }
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

/// K_pred x K_gt counts; entry (p, g) counts points predicted p with truth g.
inline CountMatrix confusion_matrix(const IndexVec& pred, const IndexVec& gt, int k_pred, int k_gt) {
  if (pred.size() != gt.size()) throw Error("confusion_matrix: length mismatch");
  CountMatrix cm = CountMatrix::Zero(k_pred, k_gt);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= k_pred || gt[i] < 0 || gt[i] >= k_gt)
      throw Error("confusion_matrix: label out of range");
    ++cm(pred[i], gt[i]);
  }
  return cm;
}

/// Injective pseudo -> ground-truth map maximising the total matched count.
/// The matrix is padded with zero-count dummies to square; pseudo classes
/// matched to a dummy map to -1. Ties resolve to the lexicographically
/// smallest mapping.
inline IndexVec hungarian_align(const CountMatrix& cm) {
  const int kp = static_cast<int>(cm.rows()), kg = static_cast<int>(cm.cols());
  if (kp < 1 || kg < 1) throw Error("hungarian_align: empty confusion matrix");
  const int n = std::max(kp, kg);
  const std::int64_t top = cm.maxCoeff();
  CountMatrix cost = CountMatrix::Constant(n, n, top);
  cost.topLeftCorner(kp, kg) = (CountMatrix::Constant(kp, kg, top) - cm);
  const Assignment a = solve_assignment_lexmin(cost);
  IndexVec mapping(static_cast<std::size_t>(kp), -1);
  for (int p = 0; p < kp; ++p) {
    const int g = a.row_to_col[static_cast<std::size_t>(p)];
    if (g < kg) mapping[static_cast<std::size_t>(p)] = g;
  }
  return mapping;
}

inline std::int64_t matched_count(const CountMatrix& cm, const IndexVec& mapping) {
  std::int64_t total = 0;
  for (std::size_t p = 0; p < mapping.size(); ++p)
    if (mapping[p] >= 0) total += cm(static_cast<Eigen::Index>(p), mapping[p]);
  return total;
}

inline IndexVec apply_mapping(const IndexVec& pseudo, const IndexVec& mapping) {
  IndexVec out(pseudo.size());
  for (std::size_t i = 0; i < pseudo.size(); ++i) out[i] = mapping[static_cast<std::size_t>(pseudo[i])];
  return out;
}

struct SegMetrics {
  IndexVec mapping;             // pseudo -> gt, -1 when unmatched; empty if labels were already gt ids
  std::vector<double> iou;      // per gt class, NaN when absent from gt
  std::vector<char> present;    // class occurs in gt
  double miou = 0.0;
  std::int64_t num_points = 0;
};

/// IoU_c = TP / (TP + FP + FN) per class present in `gt`; mIoU averages
/// those. Predictions of -1 count as misses. Classes present but never
/// predicted score 0.
inline SegMetrics compute_miou(const IndexVec& pred, const IndexVec& gt, int k_gt) {
  if (pred.size() != gt.size()) throw Error("compute_miou: length mismatch");
  if (k_gt < 1) throw Error("compute_miou: need at least one class");
  std::vector<std::int64_t> tp(static_cast<std::size_t>(k_gt), 0), fp(tp), fn(tp), support(tp);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int g = gt[i], p = pred[i];
    if (g < 0 || g >= k_gt || p < -1 || p >= k_gt) throw Error("compute_miou: label out of range");
    ++support[static_cast<std::size_t>(g)];
    if (p == g) {
      ++tp[static_cast<std::size_t>(g)];
    } else {
      ++fn[static_cast<std::size_t>(g)];
      if (p >= 0) ++fp[static_cast<std::size_t>(p)];
    }
  }
  SegMetrics m;
  m.num_points = static_cast<std::int64_t>(pred.size());
  m.iou.assign(static_cast<std::size_t>(k_gt), std::nan(""));
  m.present.assign(static_cast<std::size_t>(k_gt), 0);
  double sum = 0.0;
  int count = 0;
  for (std::size_t c = 0; c < static_cast<std::size_t>(k_gt); ++c) {
    if (support[c] == 0) continue;
    m.present[c] = 1;
    m.iou[c] = static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fp[c] + fn[c]);
    sum += m.iou[c];
    ++count;
  }
  m.miou = count > 0 ? sum / count : 0.0;
  return m;
}

/// Align pseudo-labels to ground truth and score them.
inline SegMetrics align_and_score(const IndexVec& pseudo, const IndexVec& gt, int k_pred, int k_gt) {
  const CountMatrix cm = confusion_matrix(pseudo, gt, k_pred, k_gt);
  const IndexVec mapping = hungarian_align(cm);
  SegMetrics m = compute_miou(apply_mapping(pseudo, mapping), gt, k_gt);
  m.mapping = mapping;
  return m;
}

struct BranchPredictions {
  Mat p_geo, p_color;
};

/// Softmax of prototype scores at temperature `tau` for both branches.
inline BranchPredictions predict(const ModelParams& params, const NormalizedCloud& cloud, double tau) {
  const ForwardPass fp = forward_pair(cloud, params);
  return {softmax_rows(cluster_scores(fp.features.z_geo, params.prototypes) / tau),
          softmax_rows(cluster_scores(fp.features.z_color, params.prototypes) / tau)};
}

struct SceneSegmentation {
  std::string scene_id;
  IndexVec pseudo_labels;
  std::optional<SegMetrics> metrics;  // absent for unlabelled clouds
};

/// Pseudo-labels for one cloud; metrics only when it carries labels.
inline SceneSegmentation unsup_segment(const ModelParams& params, const LabeledPointCloud& cloud, int k_gt,
                                       double tau = 0.1) {
  const BranchPredictions bp = predict(params, normalize_scene(cloud), tau);
  SceneSegmentation s;
  s.scene_id = cloud.scene_id;
  s.pseudo_labels = fuse_pseudo_labels(bp.p_geo, bp.p_color);
  if (cloud.labels) s.metrics = align_and_score(s.pseudo_labels, *cloud.labels, params.num_prototypes(), k_gt);
  return s;
}

struct DatasetSegmentation {
  int num_pseudo = 0;
  int num_gt = 0;
  std::vector<SceneSegmentation> scenes;
  std::optional<SegMetrics> overall;  // one alignment over all labelled points
  IndexVec all_pseudo, all_gt;        // concatenation over labelled scenes
};

/// Infers the number of ground-truth classes as 1 + the largest label seen.
inline int infer_num_classes(const std::vector<LabeledPointCloud>& clouds) {
  int k = 0;
  for (const auto& c : clouds)
    if (c.labels)
      for (int l : *c.labels) k = std::max(k, l + 1);
  return k;
}

inline DatasetSegmentation segment_dataset(const ModelParams& params, const std::vector<LabeledPointCloud>& clouds,
                                           int k_gt, double tau = 0.1) {
  DatasetSegmentation d;
  d.num_pseudo = params.num_prototypes();
  d.num_gt = k_gt;
  for (const auto& c : clouds) {
    d.scenes.push_back(unsup_segment(params, c, std::max(k_gt, 1), tau));
    if (c.labels) {
      const auto& s = d.scenes.back();
      d.all_pseudo.insert(d.all_pseudo.end(), s.pseudo_labels.begin(), s.pseudo_labels.end());
      d.all_gt.insert(d.all_gt.end(), c.labels->begin(), c.labels->end());
    }
  }
  if (!d.all_gt.empty()) d.overall = align_and_score(d.all_pseudo, d.all_gt, d.num_pseudo, k_gt);
  return d;
}

struct ChanceBand {
  double mean = 0.0;
  double lo = 0.0;  // 0.5th percentile
  double hi = 0.0;  // 99.5th percentile
  std::vector<double> samples;
};

/// Null distribution of aligned mIoU when the pseudo-labels are randomly
/// permuted across points (label histogram preserved).
inline ChanceBand permutation_chance_band(const IndexVec& pseudo, const IndexVec& gt, int k_pred, int k_gt,
                                          int draws = 1000, std::uint64_t seed = 0) {
  if (draws < 1) throw Error("permutation_chance_band: need at least one draw");
  ChanceBand band;
  Rng rng(mix_seed(seed, 0xc4a2ce));
  IndexVec shuffled = pseudo;
  for (int d = 0; d < draws; ++d) {
    shuffle(shuffled, rng);
    band.samples.push_back(align_and_score(shuffled, gt, k_pred, k_gt).miou);
  }
  std::vector<double> sorted = band.samples;
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  band.lo = quantile(0.005);
  band.hi = quantile(0.995);
  double s = 0.0;
  for (double v : sorted) s += v;
  band.mean = s / static_cast<double>(sorted.size());
  return band;
}

// ---------------------------------------------------------------------------
// Metrics documents

/// Human-readable metrics: `key: value` lines then a per-class table.
inline void write_metrics_text(const DatasetSegmentation& d, std::ostream& out) {
  char buf[128];
  out << "# pgcc unsupervised segmentation metrics\n";
  out << "scenes: " << d.scenes.size() << "\n";
  out << "pseudo_classes: " << d.num_pseudo << "\n";
  out << "gt_classes: " << d.num_gt << "\n";
  if (!d.overall) {
    out << "labelled_points: 0\nmiou: n/a\n";
    return;
  }
  const auto& m = *d.overall;
  out << "labelled_points: " << m.num_points << "\n";
  std::snprintf(buf, sizeof buf, "%.6f", m.miou);
  out << "miou: " << buf << "\n";
  out << "mapping:";
  for (std::size_t p = 0; p < m.mapping.size(); ++p) out << " " << p << "->" << m.mapping[p];
  out << "\n\nclass  present  iou\n";
  for (std::size_t c = 0; c < m.iou.size(); ++c) {
    if (m.present[c]) std::snprintf(buf, sizeof buf, "%5zu  %7s  %.6f\n", c, "yes", m.iou[c]);
    else std::snprintf(buf, sizeof buf, "%5zu  %7s  %s\n", c, "no", "-");
    out << buf;
  }
}

/// Columns: scope,scene_id,num_points,miou,iou_0..iou_{K_gt-1}. One row per
/// scene (scope "scene") then the aggregate (scope "all"). Unlabelled scenes
/// and absent classes leave their metric cells empty.
inline void write_metrics_csv(const DatasetSegmentation& d, std::ostream& out) {
  out << "scope,scene_id,num_points,miou";
  for (int c = 0; c < d.num_gt; ++c) out << ",iou_" << c;
  out << "\n";
  char buf[64];
  auto row = [&](const std::string& scope, const std::string& id, std::size_t n, const std::optional<SegMetrics>& m) {
    out << scope << "," << id << "," << n << ",";
    if (m) {
      std::snprintf(buf, sizeof buf, "%.6f", m->miou);
      out << buf;
    }
    for (int c = 0; c < d.num_gt; ++c) {
      out << ",";
      if (m && m->present[static_cast<std::size_t>(c)]) {
        std::snprintf(buf, sizeof buf, "%.6f", m->iou[static_cast<std::size_t>(c)]);
        out << buf;
      }
    }
    out << "\n";
  };
  for (const auto& s : d.scenes) row("scene", s.scene_id, s.pseudo_labels.size(), s.metrics);
  row("all", "*", d.all_gt.size(), d.overall);
}

// ---------------------------------------------------------------------------
// Swapped reconstruction export

struct ReconstructionSummary {
  double mse_geo = 0.0;    // coordinates predicted from colour features
  double mse_color = 0.0;  // colours predicted from geometry features
  std::filesystem::path geometry_file;  // normalised coords + predicted colours
  std::filesystem::path color_file;     // predicted coords + input colours
};

inline ReconstructionSummary reconstruction_errors(const ModelParams& params, const LabeledPointCloud& cloud) {
  const NormalizedCloud n = normalize_scene(cloud);
  const ForwardPass fp = forward_pair(n, params);
  const ReconstructResult r = point_reconstruct_loss(fp.recon.geo, fp.recon.color, n.geo, n.color);
  return {r.mse_geo, r.mse_color, {}, {}};
}

/// Writes `<id>.pred_color.pgcc` (normalised coordinates with colours
/// predicted from geometry) and `<id>.pred_geo.pgcc` (coordinates predicted
/// from colour with the input colours). Exported colours are clamped to
/// [0,1]; the reported errors use the unclamped predictions.
inline ReconstructionSummary reconstruct_export(const ModelParams& params, const LabeledPointCloud& cloud,
                                                const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (!std::filesystem::is_directory(out_dir)) throw InputError("cannot create directory " + out_dir.string());
  const NormalizedCloud n = normalize_scene(cloud);
  const ForwardPass fp = forward_pair(n, params);
  const ReconstructResult r = point_reconstruct_loss(fp.recon.geo, fp.recon.color, n.geo, n.color);
  const std::string id = cloud.scene_id.empty() ? "cloud" : cloud.scene_id;

  ReconstructionSummary s{r.mse_geo, r.mse_color, out_dir / (id + ".pred_color.pgcc"),
                          out_dir / (id + ".pred_geo.pgcc")};
  LabeledPointCloud a{n.geo, fp.recon.color.cwiseMax(0.0).cwiseMin(1.0), cloud.labels, id + ".pred_color"};
  LabeledPointCloud b{fp.recon.geo, n.color, cloud.labels, id + ".pred_geo"};
  save_cloud(a, s.geometry_file);
  save_cloud(b, s.color_file);
  return s;
}

}  // namespace pgcc
