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


#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "pgcc/checkpoint.hpp"
#include "pgcc/eval.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace pgcc {
namespace {

// Best matched count over every injective pseudo -> gt map, by enumerating
// permutations of the padded square matrix.
std::int64_t brute_force_best(const CountMatrix& cm) {
  const int n = static_cast<int>(std::max(cm.rows(), cm.cols()));
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::int64_t best = -1;
  do {
    std::int64_t s = 0;
    for (int p = 0; p < cm.rows(); ++p)
      if (perm[static_cast<std::size_t>(p)] < cm.cols()) s += cm(p, perm[static_cast<std::size_t>(p)]);
    best = std::max(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

CountMatrix random_counts(int rows, int cols, Rng& rng, int max_count) {
  CountMatrix cm(rows, cols);
  for (Eigen::Index i = 0; i < cm.size(); ++i)
    cm.data()[i] = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::size_t>(max_count) + 1));
  return cm;
}

TEST(Fuse, Examples) {
  Mat a(2, 3), b(2, 3);
  a << 0, 1, 0, 0, 0, 1;
  EXPECT_EQ(fuse_pseudo_labels(a, a), (IndexVec{1, 2}));
  Mat g(1, 2), c(1, 2);
  g << 0.6, 0.4;
  c << 0.3, 0.7;
  EXPECT_EQ(fuse_pseudo_labels(g, c), (IndexVec{1}));
  Mat t = Mat::Constant(1, 2, 0.5);
  EXPECT_EQ(fuse_pseudo_labels(t, t), (IndexVec{0}));
  EXPECT_THROW(fuse_pseudo_labels(a, g), Error);
}

TEST(Fuse, ScaleInvariant) {
  Rng rng(1);
  const Mat g = softmax_rows(testing::random_matrix(50, 6, rng) * 4.0);
  const Mat c = softmax_rows(testing::random_matrix(50, 6, rng) * 4.0);
  EXPECT_EQ(fuse_pseudo_labels(g, c), fuse_pseudo_labels(3.5 * g, 3.5 * c));
}

TEST(Hungarian, DiagonalAndPermutation) {
  CountMatrix d = CountMatrix::Zero(4, 4);
  for (int i = 0; i < 4; ++i) d(i, i) = 10 + i;
  EXPECT_EQ(hungarian_align(d), (IndexVec{0, 1, 2, 3}));

  // Row p of P*D holds pseudo class p, whose counts sit at gt column perm[p].
  const IndexVec perm{2, 0, 3, 1};
  CountMatrix pd = CountMatrix::Zero(4, 4);
  for (int p = 0; p < 4; ++p) pd(p, perm[static_cast<std::size_t>(p)]) = 5 + p;
  EXPECT_EQ(hungarian_align(pd), perm);
}

TEST(Hungarian, SixBySixMatchesAllPermutations) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const CountMatrix cm = random_counts(6, 6, rng, 30);
    EXPECT_EQ(matched_count(cm, hungarian_align(cm)), brute_force_best(cm));
  }
}

TEST(Hungarian, RectangularAndLexicographicTies) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const int kp = 1 + static_cast<int>(uniform_index(rng, 7)), kg = 1 + static_cast<int>(uniform_index(rng, 7));
    const CountMatrix cm = random_counts(kp, kg, rng, 3);  // small counts force ties
    const IndexVec m = hungarian_align(cm);
    EXPECT_EQ(matched_count(cm, m), brute_force_best(cm));
    std::vector<int> used;
    for (int g : m)
      if (g >= 0) used.push_back(g);
    std::sort(used.begin(), used.end());
    EXPECT_EQ(std::adjacent_find(used.begin(), used.end()), used.end());
    EXPECT_EQ(static_cast<int>(used.size()), std::min(kp, kg));
  }
  // All-equal counts: every mapping ties, the identity is lexicographically first.
  EXPECT_EQ(hungarian_align(CountMatrix::Constant(3, 3, 4)), (IndexVec{0, 1, 2}));
}

TEST(Hungarian, SolverOnNegativeAndZeroCosts) {
  CountMatrix c(3, 3);
  c << -5, 0, 2, 0, -1, 0, 3, 0, 0;
  const Assignment a = solve_assignment(c);
  EXPECT_EQ(a.cost, -6);
  EXPECT_EQ(solve_assignment_lexmin(c).cost, -6);
}

TEST(Miou, Examples) {
  IndexVec gt(200), pred(200);
  for (int i = 0; i < 200; ++i) gt[static_cast<std::size_t>(i)] = i < 100 ? 0 : 1;
  EXPECT_EQ(compute_miou(gt, gt, 2).miou, 1.0);
  for (int i = 0; i < 200; ++i) pred[static_cast<std::size_t>(i)] = 1 - gt[static_cast<std::size_t>(i)];
  EXPECT_EQ(compute_miou(pred, gt, 2).miou, 0.0);

  pred = gt;
  for (int i = 0; i < 50; ++i) pred[static_cast<std::size_t>(i)] = 1;
  const SegMetrics m = compute_miou(pred, gt, 2);
  // Oracle by counting: class 0 TP 50, FN 50; class 1 TP 100, FP 50.
  EXPECT_NEAR(m.iou[0], 50.0 / 100.0, 1e-15);
  EXPECT_NEAR(m.iou[1], 100.0 / 150.0, 1e-15);
  EXPECT_NEAR(m.miou, (0.5 + 2.0 / 3.0) / 2.0, 1e-15);
  EXPECT_NEAR(m.miou, 0.5833, 1e-4);
}

TEST(Miou, AbsentAndUnpredictedClasses) {
  const IndexVec gt{0, 0, 2, 2}, pred{0, 0, 0, 0};
  const SegMetrics m = compute_miou(pred, gt, 3);
  EXPECT_FALSE(m.present[1]);
  EXPECT_TRUE(std::isnan(m.iou[1]));
  EXPECT_EQ(m.iou[2], 0.0);
  EXPECT_NEAR(m.miou, 0.25, 1e-15);
  EXPECT_THROW(compute_miou({0}, {0, 1}, 2), Error);
}

TEST(Miou, RangeAndRelabelInvariance) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    IndexVec gt(300), pred(300);
    for (std::size_t i = 0; i < 300; ++i) {
      gt[i] = static_cast<int>(uniform_index(rng, 5));
      pred[i] = uniform(rng, 0, 1) < 0.6 ? gt[i] : static_cast<int>(uniform_index(rng, 5));
    }
    std::vector<int> perm{3, 1, 4, 0, 2};
    IndexVec pg(300), pp(300);
    for (std::size_t i = 0; i < 300; ++i) {
      pg[i] = perm[static_cast<std::size_t>(gt[i])];
      pp[i] = perm[static_cast<std::size_t>(pred[i])];
    }
    const double a = compute_miou(pred, gt, 5).miou;
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
    EXPECT_NEAR(compute_miou(pp, pg, 5).miou, a, 1e-15);
  }
}

TEST(Align, RecoversPermutedLabels) {
  Rng rng(5);
  IndexVec gt(400), pseudo(400);
  const std::vector<int> to_pseudo{5, 2, 7, 0};
  for (std::size_t i = 0; i < 400; ++i) {
    gt[i] = static_cast<int>(uniform_index(rng, 4));
    pseudo[i] = to_pseudo[static_cast<std::size_t>(gt[i])];
  }
  const SegMetrics m = align_and_score(pseudo, gt, 8, 4);
  EXPECT_EQ(m.miou, 1.0);
  EXPECT_EQ(m.mapping[5], 0);
  EXPECT_EQ(m.mapping[1], -1);
}

TEST(ChanceBand, DeterministicAndOrdered) {
  Rng rng(6);
  IndexVec gt(512), pseudo(512);
  for (std::size_t i = 0; i < 512; ++i) {
    gt[i] = static_cast<int>(i / 64);
    pseudo[i] = gt[i];
  }
  const ChanceBand a = permutation_chance_band(pseudo, gt, 8, 8, 200, 1);
  const ChanceBand b = permutation_chance_band(pseudo, gt, 8, 8, 200, 1);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_LE(a.lo, a.mean);
  EXPECT_LE(a.mean, a.hi);
  // Balanced random labels overlap by 1/64 per pair, IoU (1/64) / (15/64);
  // the matching picks the larger overlaps, so the mean sits above that.
  EXPECT_GT(a.lo, 1.0 / 15.0 - 0.02);
  EXPECT_GT(a.mean, 1.0 / 15.0);
  EXPECT_LT(a.hi, 0.125);
}

// A model whose geometry branch carries coordinates in features 0..2 and
// whose colour branch carries colours in features 3..5; decoders read the
// block matching their target. On clouds whose colour equals their
// normalised coordinates both reconstructions are exact.
ModelParams perfect_fixture() {
  ModelParams p = ModelParams::init(ModelShape{6, 6, 1, 6, 4, 4}, 0);
  p.for_each_tensor([](Mat& m) { m.setZero(); });
  p.embed.geo.weight.leftCols(3).setIdentity();
  p.embed.color.weight.rightCols(3).setIdentity();
  p.encoder.layers[0].weight.setIdentity();
  p.projection.weight.topLeftCorner(4, 4).setIdentity();
  p.color_decoder.weight.topRows(3).setIdentity();
  p.geo_decoder.weight.bottomRows(3).setIdentity();
  p.prototypes.setIdentity();
  return p;
}

LabeledPointCloud colour_equals_position_cloud(int n, std::uint64_t seed) {
  Rng rng(seed);
  LabeledPointCloud c;
  c.coords = testing::random_matrix(n, 3, rng, 0.0, 1.0);
  c.coords.row(0).setZero();
  c.coords.row(1).setOnes();
  c.colors = c.coords;
  c.labels = IndexVec(static_cast<std::size_t>(n), 0);
  c.scene_id = "fixture";
  return c;
}

TEST(Reconstruct, PerfectDecodersExportTheInput) {
  const ModelParams p = perfect_fixture();
  const LabeledPointCloud c = colour_equals_position_cloud(20, 7);
  const fs::path dir = fs::temp_directory_path() / "pgcc_recon_fixture";
  fs::remove_all(dir);
  const ReconstructionSummary s = reconstruct_export(p, c, dir);
  EXPECT_LT(s.mse_geo, 1e-28);
  EXPECT_LT(s.mse_color, 1e-28);
  const NormalizedCloud n = normalize_scene(c);
  const LabeledPointCloud a = load_cloud(s.geometry_file), b = load_cloud(s.color_file);
  EXPECT_LT((a.coords - n.geo).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((a.colors - n.color).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((b.coords - n.geo).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(*a.labels, *c.labels);
}

TEST(Reconstruct, ExportReloadsLosslessly) {
  const ModelParams p = ModelParams::init(ModelShape{}, 3);
  const LabeledPointCloud c = generate_scene(default_scene_spec(), 4);
  const fs::path dir = fs::temp_directory_path() / "pgcc_recon_roundtrip";
  fs::remove_all(dir);
  const ReconstructionSummary s = reconstruct_export(p, c, dir);
  const ForwardPass fp = forward_pair(normalize_scene(c), p);
  EXPECT_EQ(load_cloud(s.color_file).coords, fp.recon.geo);
  EXPECT_EQ(load_cloud(s.geometry_file).colors, fp.recon.color.cwiseMax(0.0).cwiseMin(1.0));
  const ReconstructionSummary e = reconstruction_errors(p, c);
  EXPECT_EQ(e.mse_geo, s.mse_geo);
  EXPECT_THROW(reconstruct_export(p, c, "/proc/pgcc_cannot_write_here"), InputError);
}

TEST(Segment, RepeatableAndNonMutating) {
  const ModelParams p = ModelParams::init(ModelShape{}, 8);
  std::vector<LabeledPointCloud> clouds{generate_scene(default_scene_spec(), 1), generate_scene(default_scene_spec(), 2)};
  clouds[1].labels.reset();
  const std::uint64_t h = params_hash(p);
  const DatasetSegmentation a = segment_dataset(p, clouds, 8), b = segment_dataset(p, clouds, 8);
  EXPECT_EQ(params_hash(p), h);
  EXPECT_EQ(a.scenes[0].pseudo_labels, b.scenes[0].pseudo_labels);
  EXPECT_TRUE(a.scenes[0].metrics.has_value());
  EXPECT_FALSE(a.scenes[1].metrics.has_value());
  EXPECT_EQ(a.scenes[1].pseudo_labels.size(), 512u);
  EXPECT_EQ(a.all_gt.size(), 512u);
  std::ostringstream ta, tb, ca;
  write_metrics_text(a, ta);
  write_metrics_text(b, tb);
  EXPECT_EQ(ta.str(), tb.str());
  write_metrics_csv(a, ca);
  std::istringstream lines(ca.str());
  std::string header, s0, s1, all;
  std::getline(lines, header);
  std::getline(lines, s0);
  std::getline(lines, s1);
  std::getline(lines, all);
  EXPECT_EQ(header, "scope,scene_id,num_points,miou,iou_0,iou_1,iou_2,iou_3,iou_4,iou_5,iou_6,iou_7");
  EXPECT_EQ(s1.rfind("scene,scene-2,512,,", 0), 0u) << s1;
  EXPECT_EQ(all.rfind("all,*,512,", 0), 0u) << all;
}

TEST(Segment, PerfectFixtureScoresOne) {
  // With identity prototypes, the fused argmax picks the largest of the
  // first coordinates; labelling points that way gives mIoU 1.
  const ModelParams p = perfect_fixture();
  LabeledPointCloud c = colour_equals_position_cloud(40, 9);
  const SceneSegmentation probe = unsup_segment(p, c, 4);
  c.labels = probe.pseudo_labels;
  const SceneSegmentation s = unsup_segment(p, c, 4);
  ASSERT_TRUE(s.metrics);
  EXPECT_EQ(s.metrics->miou, 1.0);
}

}  // namespace
}  // namespace pgcc
