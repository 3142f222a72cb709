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

// Training configuration and its flat `key = value` text form.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pgcc/encoder.hpp"
#include "pgcc/losses.hpp"
#include "pgcc/optim.hpp"
#include "pgcc/scene.hpp"

namespace pgcc {

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 50;
  int batch_size = 8;  // scenes per step
  std::uint64_t seed = 0;

  ModelShape shape;
  Temperatures temperatures;
  LossWeights weights;
  double point_contrast_weight = 1.0;  // 0 drops the point contrast term
  double sinkhorn_eps = 0.05;
  int sinkhorn_iters = 3;
  double threshold_scale = 2.0;
  int contrast_samples = 1024;
  TargetMode cluster_targets = TargetMode::Sinkhorn;
  AugmentParams augment;

  AdamWOptions adamw() const { return {adam_beta1, adam_beta2, adam_eps, weight_decay}; }
  SwappedOptions swapped() const {
    return {temperatures.cluster, sinkhorn_eps, sinkhorn_iters, cluster_targets};
  }
};

namespace detail {

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct ConfigKey {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

inline double parse_double(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument(s);
  return v;
}

inline long long parse_int(const std::string& s) {
  std::size_t pos = 0;
  const long long v = std::stoll(s, &pos);
  if (pos != s.size()) throw std::invalid_argument(s);
  return v;
}

/// Key table in the order configs are written.
inline const std::vector<std::pair<std::string, ConfigKey>>& config_keys() {
  using C = TrainConfig;
  auto real = [](double C::*field) {
    return ConfigKey{[field](const C& c) { return format_double(c.*field); },
                     [field](C& c, const std::string& s) { c.*field = parse_double(s); }};
  };
  auto integer = [](int C::*field) {
    return ConfigKey{[field](const C& c) { return std::to_string(c.*field); },
                     [field](C& c, const std::string& s) { c.*field = static_cast<int>(parse_int(s)); }};
  };
  auto shape_int = [](int ModelShape::*field) {
    return ConfigKey{[field](const C& c) { return std::to_string(c.shape.*field); },
                     [field](C& c, const std::string& s) { c.shape.*field = static_cast<int>(parse_int(s)); }};
  };
  auto sub_real = [](auto member, auto field) {
    return ConfigKey{[=](const C& c) { return format_double((c.*member).*field); },
                     [=](C& c, const std::string& s) { (c.*member).*field = parse_double(s); }};
  };
  static const std::vector<std::pair<std::string, ConfigKey>> keys = {
      {"learning_rate", real(&C::learning_rate)},
      {"weight_decay", real(&C::weight_decay)},
      {"adam_beta1", real(&C::adam_beta1)},
      {"adam_beta2", real(&C::adam_beta2)},
      {"adam_eps", real(&C::adam_eps)},
      {"epochs", integer(&C::epochs)},
      {"batch_size", integer(&C::batch_size)},
      {"seed", ConfigKey{[](const C& c) { return std::to_string(c.seed); },
                         [](C& c, const std::string& s) {
                           const long long v = parse_int(s);
                           if (v < 0) throw std::invalid_argument(s);
                           c.seed = static_cast<std::uint64_t>(v);
                         }}},
      {"embed_width", shape_int(&ModelShape::embed_width)},
      {"hidden_width", shape_int(&ModelShape::hidden_width)},
      {"depth", shape_int(&ModelShape::depth)},
      {"feature_width", shape_int(&ModelShape::feature_width)},
      {"projection_width", shape_int(&ModelShape::projection_width)},
      {"num_prototypes", shape_int(&ModelShape::num_prototypes)},
      {"tau_contrast", sub_real(&C::temperatures, &Temperatures::contrast)},
      {"tau_cluster", sub_real(&C::temperatures, &Temperatures::cluster)},
      {"alpha", sub_real(&C::weights, &LossWeights::alpha)},
      {"beta", sub_real(&C::weights, &LossWeights::beta)},
      {"gamma", sub_real(&C::weights, &LossWeights::gamma)},
      {"point_contrast_weight", real(&C::point_contrast_weight)},
      {"sinkhorn_eps", real(&C::sinkhorn_eps)},
      {"sinkhorn_iters", integer(&C::sinkhorn_iters)},
      {"threshold_scale", real(&C::threshold_scale)},
      {"contrast_samples", integer(&C::contrast_samples)},
      {"cluster_targets",
       ConfigKey{[](const C& c) {
                   return std::string(c.cluster_targets == TargetMode::Sinkhorn ? "sinkhorn" : "softmax");
                 },
                 [](C& c, const std::string& s) {
                   if (s == "sinkhorn") c.cluster_targets = TargetMode::Sinkhorn;
                   else if (s == "softmax") c.cluster_targets = TargetMode::SelfSoftmax;
                   else throw std::invalid_argument(s);
                 }}},
      {"augment_rotation_z", sub_real(&C::augment, &AugmentParams::max_rotation_z)},
      {"augment_jitter_sd", sub_real(&C::augment, &AugmentParams::jitter_sd)},
      {"augment_color_jitter_sd", sub_real(&C::augment, &AugmentParams::color_jitter_sd)},
      {"augment_flip_prob", sub_real(&C::augment, &AugmentParams::flip_prob)},
  };
  return keys;
}

}  // namespace detail

inline void validate(const TrainConfig& c) {
  auto fail = [](const std::string& what) { throw InputError("config: " + what); };
  if (!(c.learning_rate >= 0.0)) fail("learning_rate must be nonnegative");
  if (!(c.weight_decay >= 0.0)) fail("weight_decay must be nonnegative");
  if (!(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0) || !(c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0))
    fail("adam betas must lie in [0,1)");
  if (!(c.adam_eps > 0.0)) fail("adam_eps must be positive");
  if (c.epochs < 0) fail("epochs must be nonnegative");
  if (c.batch_size < 1) fail("batch_size must be positive");
  if (c.shape.embed_width < 1 || c.shape.hidden_width < 1 || c.shape.depth < 1 ||
      c.shape.feature_width < 1 || c.shape.projection_width < 1 || c.shape.num_prototypes < 1)
    fail("model widths, depth and num_prototypes must be positive");
  if (!(c.temperatures.contrast > 0.0) || !(c.temperatures.cluster > 0.0))
    fail("temperatures must be positive");
  if (!(c.weights.alpha >= 0.0) || !(c.weights.beta >= 0.0) || !(c.weights.gamma >= 0.0) ||
      !(c.point_contrast_weight >= 0.0))
    fail("loss weights must be nonnegative");
  if (!(c.sinkhorn_eps > 0.0)) fail("sinkhorn_eps must be positive");
  if (c.sinkhorn_iters < 0) fail("sinkhorn_iters must be nonnegative");
  if (!(c.threshold_scale >= 0.0)) fail("threshold_scale must be nonnegative");
  if (c.contrast_samples < 2) fail("contrast_samples must be at least 2");
  validate(c.augment);
}

inline std::string to_config_text(const TrainConfig& c) {
  std::ostringstream out;
  for (const auto& [name, key] : detail::config_keys()) out << name << " = " << key.get(c) << "\n";
  return out.str();
}

/// Parses `key = value` lines onto `base`. Blank lines and lines starting
/// with '#' are ignored; unknown keys are errors.
inline TrainConfig parse_config(std::istream& in, const std::string& source, TrainConfig base = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source, lineno, "expected 'key = value'");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string k = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    const auto& keys = detail::config_keys();
    auto it = std::find_if(keys.begin(), keys.end(), [&](const auto& p) { return p.first == k; });
    if (it == keys.end()) throw ParseError(source, lineno, "unknown key '" + k + "'");
    try {
      it->second.set(base, v);
    } catch (const std::exception&) {
      throw ParseError(source, lineno, "bad value '" + v + "' for " + k);
    }
  }
  validate(base);
  return base;
}

inline TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  return parse_config(in, path.string(), std::move(base));
}

}  // namespace pgcc
