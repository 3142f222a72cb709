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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pgcc/checkpoint.hpp"
#include "pgcc/trainer.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace pgcc {
namespace {

std::vector<LabeledPointCloud> scenes(int n, std::uint64_t base, int points_per_object = 64) {
  SceneSpec spec = default_scene_spec();
  spec.points_per_object = points_per_object;
  std::vector<LabeledPointCloud> out;
  for (int i = 0; i < n; ++i) out.push_back(generate_scene(spec, base + static_cast<std::uint64_t>(i)));
  return out;
}

TrainConfig small_config() {
  TrainConfig c;
  c.shape = ModelShape{8, 16, 2, 8, 8, 8};
  c.epochs = 2;
  c.batch_size = 2;
  return c;
}

std::vector<NormalizedCloud> normalized(const std::vector<LabeledPointCloud>& s) {
  std::vector<NormalizedCloud> out;
  for (const auto& c : s) out.push_back(normalize_scene(c));
  return out;
}

TEST(Schedule, CosineEndpointsAndMidpoint) {
  EXPECT_DOUBLE_EQ(cosine_lr(1e-3, 0, 100), 1e-3);
  EXPECT_NEAR(cosine_lr(1e-3, 50, 100), 5e-4, 1e-18);
  EXPECT_NEAR(cosine_lr(1e-3, 100, 100), 0.0, 1e-18);
  EXPECT_DOUBLE_EQ(cosine_lr(1e-3, 5, 0), 1e-3);
}

TEST(AdamW, SingleStepMatchesHandComputation) {
  ModelParams p = ModelParams::init(ModelShape{2, 2, 1, 2, 2, 2}, 1);
  ModelParams g = p.zeros_like();
  g.projection.weight(0, 0) = 0.5;
  OptimizerState st = OptimizerState::for_params(p);
  const double w0 = p.projection.weight(0, 0), w1 = p.projection.weight(1, 1);
  const AdamWOptions o;
  adamw_update(p, g, st, 0.01, o);
  // Bias-corrected first step is lr * g / (|g| + eps) after the decay factor.
  EXPECT_NEAR(p.projection.weight(0, 0), w0 * (1 - 0.01 * 1e-4) - 0.01 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p.projection.weight(1, 1), w1 * (1 - 0.01 * 1e-4), 1e-18);
  EXPECT_EQ(st.step, 1);
}

TEST(Trainer, ZeroLearningRateOnlyRenormalisesPrototypes) {
  TrainConfig cfg = small_config();
  cfg.learning_rate = 0.0;
  TrainState st = TrainState::init(cfg);
  st.params.prototypes *= 3.0;
  ModelParams before = st.params;
  train_step(st, normalized(scenes(2, 10)), cfg, 0, 10);
  before.normalize_prototypes();
  EXPECT_EQ(params_hash(st.params), params_hash(before));
}

TEST(Trainer, PrototypesUnitAfterEveryStep) {
  TrainConfig cfg = small_config();
  cfg.learning_rate = 0.05;
  const auto batch = normalized(scenes(2, 20));
  TrainState st = TrainState::init(cfg);
  for (int s = 0; s < 5; ++s) {
    train_step(st, batch, cfg, s, 5);
    for (Eigen::Index k = 0; k < st.params.prototypes.cols(); ++k)
      EXPECT_NEAR(st.params.prototypes.col(k).norm(), 1.0, 1e-9);
  }
}

TEST(Trainer, ParameterChangeIsFirstOrderInLearningRate) {
  TrainConfig cfg = small_config();
  cfg.weight_decay = 0.0;
  const auto batch = normalized(scenes(2, 30));
  double change[2];
  int i = 0;
  for (double lr : {1e-6, 1e-7}) {
    cfg.learning_rate = lr;
    TrainState st = TrainState::init(cfg);
    const ModelParams p0 = st.params;
    train_step(st, batch, cfg, 0, 10);
    ModelParams d = st.params;
    d.add_scaled(p0, -1.0);
    d.prototypes.setZero();  // renormalisation is not part of the step
    double m = 0.0;
    d.for_each_tensor([&](const Mat& t) { m = std::max(m, t.cwiseAbs().maxCoeff()); });
    change[i++] = m;
  }
  EXPECT_LE(change[0], 1.01e-6);
  EXPECT_NEAR(change[0] / change[1], 10.0, 0.1);
}

TEST(Trainer, SmallStepsDescendOnFixedBatch) {
  TrainConfig cfg = small_config();
  cfg.learning_rate = 1e-4;
  const auto batch = normalized(scenes(2, 40));
  TrainState st = TrainState::init(cfg);
  const TrainRecord r1 = train_step(st, batch, cfg, 0, 0);
  const BatchEval after = evaluate_batch(st.params, batch, cfg, mix_seed(cfg.seed, 0x5b000000ULL));
  EXPECT_LT(after.total, r1.total);
}

TEST(Trainer, NonFiniteLossNamesTheTerm) {
  TrainConfig cfg = small_config();
  TrainState st = TrainState::init(cfg);
  st.params.geo_decoder.bias(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    train_step(st, normalized(scenes(1, 50)), cfg, 0, 1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("L_pr"), std::string::npos) << e.what();
  }
}

TEST(Trainer, RunsAreBitwiseReproducible) {
  TrainConfig cfg = small_config();
  cfg.augment = AugmentParams{0.5, 0.01, 0.02, 0.5};
  const auto data = scenes(4, 60);
  const TrainState a = pretrain(cfg, data), b = pretrain(cfg, data);
  std::ostringstream la, lb;
  write_train_log(a.log, la);
  write_train_log(b.log, lb);
  EXPECT_EQ(la.str(), lb.str());
  EXPECT_EQ(params_hash(a.params), params_hash(b.params));
  ASSERT_EQ(a.log.size(), 4u);
  cfg.seed = 1;
  EXPECT_NE(params_hash(pretrain(cfg, data).params), params_hash(a.params));
}

TEST(Trainer, ZeroEpochsReturnsInitialisation) {
  TrainConfig cfg = small_config();
  cfg.epochs = 0;
  const TrainState st = pretrain(cfg, scenes(2, 70));
  EXPECT_TRUE(st.log.empty());
  EXPECT_EQ(params_hash(st.params), params_hash(TrainState::init(cfg).params));
}

TEST(Trainer, RejectsEmptyInputs) {
  EXPECT_THROW(pretrain(small_config(), {}), InputError);
  TrainState st = TrainState::init(small_config());
  EXPECT_THROW(train_step(st, {}, small_config(), 0, 1), InputError);
}

// Descent threshold frozen from the pilot run on the literal summed point
// contrast (pilot ratio ~0.70 on the default scenes).
TEST(Trainer, FiftyEpochsOnThirtyTwoScenesDescend) {
  TrainConfig cfg;
  cfg.shape.num_prototypes = 8;
  const TrainState st = pretrain(cfg, scenes(32, 1000));
  ASSERT_EQ(st.log.size(), 200u);
  const double ratio = st.log.back().total / st.log.front().total;
  RecordProperty("total_ratio", std::to_string(ratio));
  std::printf("total %.2f -> %.2f (ratio %.4f)\n", st.log.front().total, st.log.back().total, ratio);
  EXPECT_LT(ratio, 0.85);
  EXPECT_LT(st.log.back().parts.reconstruct, 0.5 * st.log.front().parts.reconstruct);
  EXPECT_LT(st.log.back().parts.cluster, st.log.front().parts.cluster);
}

TEST(Subsample, SortedDistinctAndSeeded) {
  const auto a = subsample_points(100, 10, 3);
  EXPECT_EQ(a, subsample_points(100, 10, 3));
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::adjacent_find(a.begin(), a.end()), a.end());
  EXPECT_EQ(subsample_points(5, 10, 3).size(), 5u);
}

TEST(Config, ParseRoundTripAndErrors) {
  TrainConfig c;
  c.learning_rate = 3e-4;
  c.cluster_targets = TargetMode::SelfSoftmax;
  c.shape.num_prototypes = 7;
  c.augment.flip_prob = 0.25;
  std::istringstream in(to_config_text(c));
  const TrainConfig back = parse_config(in, "mem");
  EXPECT_EQ(to_config_text(back), to_config_text(c));

  std::istringstream partial("# comment\n\nepochs = 3\n  seed=9  \n");
  const TrainConfig p = parse_config(partial, "mem");
  EXPECT_EQ(p.epochs, 3);
  EXPECT_EQ(p.seed, 9u);
  EXPECT_EQ(p.learning_rate, 1e-3);

  auto message = [](const std::string& text) {
    std::istringstream s(text);
    try {
      parse_config(s, "cfg");
    } catch (const ParseError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message("epochs = 2\nlearnign_rate = 1\n").find(":2"), std::string::npos);
  EXPECT_NE(message("epochs = two\n").find("bad value"), std::string::npos);
  EXPECT_NE(message("epochs\n").find(":1"), std::string::npos);
  std::istringstream neg("batch_size = 0\n");
  EXPECT_THROW(parse_config(neg, "cfg"), InputError);
}

TEST(Config, DefaultsMatchRecipe) {
  const TrainConfig c;
  EXPECT_EQ(c.learning_rate, 1e-3);
  EXPECT_EQ(c.weight_decay, 1e-4);
  EXPECT_EQ(c.adam_beta1, 0.9);
  EXPECT_EQ(c.adam_beta2, 0.999);
  EXPECT_EQ(c.adam_eps, 1e-8);
  EXPECT_EQ(c.temperatures.contrast, 0.4);
  EXPECT_EQ(c.temperatures.cluster, 0.1);
  EXPECT_EQ(c.weights.alpha, 100.0);
  EXPECT_EQ(c.weights.beta, 100.0);
  EXPECT_EQ(c.weights.gamma, 1.0);
  EXPECT_EQ(c.sinkhorn_eps, 0.05);
  EXPECT_EQ(c.sinkhorn_iters, 3);
  EXPECT_EQ(c.threshold_scale, 2.0);
  EXPECT_EQ(c.shape.num_prototypes, 20);
  EXPECT_EQ(c.contrast_samples, 1024);
}

TEST(TrainLog, RoundTripAndErrors) {
  TrainLog log;
  for (int i = 0; i < 3; ++i) log.push_back({i, 1e-3 / (i + 1), {1.0 / 3 + i, 0.1, 0.2, 0.3}, 42.0 + i, 1.9});
  std::stringstream ss;
  write_train_log(log, ss);
  const TrainLog back = read_train_log(ss, "mem");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[1].parts.point_contrast, log[1].parts.point_contrast);
  EXPECT_EQ(back[2].lr, log[2].lr);

  auto message = [](const std::string& text) {
    std::istringstream s(text);
    try {
      read_train_log(s, "log");
    } catch (const ParseError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  const std::string h = std::string(train_log_header()) + "\n";
  EXPECT_FALSE(message(h).empty());
  EXPECT_NE(message(h + "0,1,1,1,1,1,1,1\n1,1,1,1\n").find(":3"), std::string::npos);
  EXPECT_NE(message(h + "0,1,1,1,1,1,1,x\n").find(":2"), std::string::npos);
  EXPECT_NE(message(h + "1,1,1,1,1,1,1,1\n0,1,1,1,1,1,1,1\n").find(":3"), std::string::npos);
  EXPECT_NE(message("step,lr\n").find(":1"), std::string::npos);
}

TEST(Checkpoint, LosslessRoundTrip) {
  TrainConfig cfg = small_config();
  cfg.seed = 5;
  const TrainState st = pretrain(cfg, scenes(4, 80));
  const fs::path path = fs::temp_directory_path() / "pgcc_ckpt_roundtrip.txt";
  save_checkpoint({cfg, st}, path);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(params_hash(back.state.params), params_hash(st.params));
  EXPECT_EQ(params_hash(back.state.opt.m), params_hash(st.opt.m));
  EXPECT_EQ(params_hash(back.state.opt.v), params_hash(st.opt.v));
  EXPECT_EQ(back.state.opt.step, st.opt.step);
  EXPECT_EQ(to_config_text(back.config), to_config_text(cfg));
  std::ostringstream a, b;
  write_train_log(st.log, a);
  write_train_log(back.state.log, b);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(back.state.params.encoder.layers[1].weight, st.params.encoder.layers[1].weight);
}

TEST(Checkpoint, MalformedFilesReportLines) {
  TrainConfig cfg = small_config();
  std::ostringstream out;
  write_checkpoint({cfg, TrainState::init(cfg)}, out);
  std::string text = out.str();
  // Drop one value from the first tensor row.
  const auto at = text.find("tensor embed.geo.weight");
  const auto row = text.find('\n', at) + 1;
  const auto space = text.find(' ', row);
  text.erase(space, text.find_first_of(" \n", space + 1) - space);
  std::istringstream in(text);
  try {
    read_checkpoint(in, "ck");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_GT(e.line(), 0u);
  }
  std::istringstream wrong("pgcc-checkpoint v9\n");
  EXPECT_THROW(read_checkpoint(wrong, "ck"), ParseError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt"), InputError);
  EXPECT_THROW(save_checkpoint({cfg, TrainState::init(cfg)}, "/nonexistent/dir/ckpt"), InputError);
}

}  // namespace
}  // namespace pgcc
