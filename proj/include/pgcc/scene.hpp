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

// Synthetic labelled scenes, the point-cloud text format and augmentation.

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgcc/common.hpp"

namespace pgcc {

struct LabeledPointCloud {
  Mat coords;                       // N x 3
  Mat colors;                       // N x 3, channels in [0,1]
  std::optional<IndexVec> labels;   // N entries when present
  std::string scene_id;

  Eigen::Index size() const { return coords.rows(); }
  bool has_labels() const { return labels.has_value(); }
};

/// Throws if the cloud breaks its invariants. `num_classes` <= 0 skips the
/// upper bound on labels.
inline void validate(const LabeledPointCloud& cloud, int num_classes = 0) {
  if (cloud.coords.rows() < 1) throw InputError("no points");
  if (cloud.coords.cols() != 3 || cloud.colors.cols() != 3)
    throw InputError("coords and colors must have 3 columns");
  if (cloud.coords.rows() != cloud.colors.rows())
    throw InputError("coords and colors disagree on point count");
  if (!cloud.coords.allFinite() || !cloud.colors.allFinite())
    throw InputError("non-finite point data");
  if (cloud.colors.minCoeff() < 0.0 || cloud.colors.maxCoeff() > 1.0)
    throw InputError("color channel outside [0,1]");
  if (cloud.labels) {
    if (static_cast<Eigen::Index>(cloud.labels->size()) != cloud.coords.rows())
      throw InputError("label count disagrees with point count");
    for (int l : *cloud.labels) {
      if (l < 0 || (num_classes > 0 && l >= num_classes))
        throw InputError("label " + std::to_string(l) + " out of range");
    }
  }
}

// ---------------------------------------------------------------------------
// Scene generation

enum class ShapeKind { Box, Sphere, Plane };

inline const char* to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::Box: return "box";
    case ShapeKind::Sphere: return "sphere";
    case ShapeKind::Plane: return "plane";
  }
  return "?";
}

inline ShapeKind shape_kind_from_string(const std::string& s) {
  if (s == "box") return ShapeKind::Box;
  if (s == "sphere") return ShapeKind::Sphere;
  if (s == "plane") return ShapeKind::Plane;
  throw InputError("unknown shape kind '" + s + "'");
}

/// Per-class geometry. `size_min`/`size_max` bound the box side length, the
/// sphere radius or the plane half-extent. Objects are centred at `anchor`
/// displaced uniformly by up to `anchor_jitter` on each axis.
struct ShapeTemplate {
  ShapeKind kind = ShapeKind::Box;
  double size_min = 0.5;
  double size_max = 1.0;
  Eigen::Vector3d anchor = Eigen::Vector3d::Zero();
  double anchor_jitter = 0.0;
};

struct SceneSpec {
  int num_objects = 8;
  int num_classes = 8;
  int points_per_object = 64;
  double geometry_noise_sd = 0.01;
  double color_noise_sd = 0.03;
  std::vector<Eigen::Vector3d> class_palette;
  std::vector<ShapeTemplate> class_shapes;
};

/// A spec with `num_classes` well separated hues and a ring layout that
/// alternates shape kind and height by class.
inline SceneSpec default_scene_spec(int num_classes = 8) {
  if (num_classes < 1) throw InputError("num_classes must be positive");
  SceneSpec spec;
  spec.num_classes = num_classes;
  spec.num_objects = num_classes;
  for (int c = 0; c < num_classes; ++c) {
    // HSV -> RGB with two brightness levels so neighbouring hues stay apart.
    const double h = 6.0 * static_cast<double>(c) / num_classes;
    const double v = (c % 2 == 0) ? 0.95 : 0.6;
    const double s = 0.85;
    const double f = h - std::floor(h);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    Eigen::Vector3d rgb;
    switch (static_cast<int>(std::floor(h)) % 6) {
      case 0: rgb = {v, t, p}; break;
      case 1: rgb = {q, v, p}; break;
      case 2: rgb = {p, v, t}; break;
      case 3: rgb = {p, q, v}; break;
      case 4: rgb = {t, p, v}; break;
      default: rgb = {v, p, q}; break;
    }
    spec.class_palette.push_back(rgb);

    ShapeTemplate shape;
    shape.kind = static_cast<ShapeKind>(c % 3);
    shape.size_min = 0.4;
    shape.size_max = 0.8;
    const double angle = 2.0 * M_PI * c / num_classes;
    shape.anchor = {3.0 * std::cos(angle), 3.0 * std::sin(angle), (c % 2) * 1.5};
    shape.anchor_jitter = 0.3;
    spec.class_shapes.push_back(shape);
  }
  return spec;
}

inline void validate(const SceneSpec& spec) {
  if (spec.num_objects < 1) throw InputError("scene spec: num_objects must be positive");
  if (spec.points_per_object < 1)
    throw InputError("scene spec: points_per_object must be positive");
  if (spec.num_classes < 1) throw InputError("scene spec: num_classes must be positive");
  if (!(spec.geometry_noise_sd >= 0.0) || !std::isfinite(spec.geometry_noise_sd) ||
      !(spec.color_noise_sd >= 0.0) || !std::isfinite(spec.color_noise_sd))
    throw InputError("scene spec: noise sd must be finite and nonnegative");
  if (static_cast<int>(spec.class_palette.size()) != spec.num_classes ||
      static_cast<int>(spec.class_shapes.size()) != spec.num_classes)
    throw InputError("scene spec: palette and shapes need one entry per class");
  for (const auto& c : spec.class_palette) {
    if (c.minCoeff() < 0.0 || c.maxCoeff() > 1.0)
      throw InputError("scene spec: palette entries must lie in [0,1]");
  }
  for (const auto& s : spec.class_shapes) {
    if (!(s.size_min > 0.0) || s.size_max < s.size_min || s.anchor_jitter < 0.0)
      throw InputError("scene spec: bad shape size range");
  }
}

namespace detail {

inline Eigen::Vector3d sample_surface(const ShapeTemplate& shape, double size, Rng& rng) {
  switch (shape.kind) {
    case ShapeKind::Sphere: {
      Eigen::Vector3d d;
      do {
        d = {gaussian(rng), gaussian(rng), gaussian(rng)};
      } while (d.norm() == 0.0);
      return size * d.normalized();
    }
    case ShapeKind::Plane:
      return {uniform(rng, -size, size), uniform(rng, -size, size), 0.0};
    case ShapeKind::Box: {
      // Cube of side `size`; all faces have equal area.
      const double h = 0.5 * size;
      const int face = static_cast<int>(uniform_index(rng, 6));
      Eigen::Vector3d p{uniform(rng, -h, h), uniform(rng, -h, h), uniform(rng, -h, h)};
      p[face / 2] = (face % 2 == 0) ? -h : h;
      return p;
    }
  }
  return Eigen::Vector3d::Zero();
}

}  // namespace detail

/// Object i is drawn from class i mod num_classes, so labels form
/// num_objects contiguous runs of points_per_object points.
inline LabeledPointCloud generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng(mix_seed(seed, 0x5ce4e));
  const Eigen::Index n = static_cast<Eigen::Index>(spec.num_objects) * spec.points_per_object;
  LabeledPointCloud cloud;
  cloud.coords.resize(n, 3);
  cloud.colors.resize(n, 3);
  cloud.labels = IndexVec(static_cast<std::size_t>(n));
  cloud.scene_id = "scene-" + std::to_string(seed);

  Eigen::Index row = 0;
  for (int obj = 0; obj < spec.num_objects; ++obj) {
    const int cls = obj % spec.num_classes;
    const ShapeTemplate& shape = spec.class_shapes[cls];
    Eigen::Vector3d center = shape.anchor;
    for (int a = 0; a < 3; ++a) center[a] += uniform(rng, -shape.anchor_jitter, shape.anchor_jitter);
    const double size = uniform(rng, shape.size_min, shape.size_max);
    for (int k = 0; k < spec.points_per_object; ++k, ++row) {
      Eigen::Vector3d p = center + detail::sample_surface(shape, size, rng);
      for (int a = 0; a < 3; ++a) p[a] += spec.geometry_noise_sd * gaussian(rng);
      cloud.coords.row(row) = p.transpose();
      for (int a = 0; a < 3; ++a) {
        const double c = spec.class_palette[cls][a] + spec.color_noise_sd * gaussian(rng);
        cloud.colors(row, a) = std::clamp(c, 0.0, 1.0);
      }
      (*cloud.labels)[static_cast<std::size_t>(row)] = cls;
    }
  }
  return cloud;
}

inline nlohmann::json to_json(const SceneSpec& spec) {
  nlohmann::json j;
  j["num_objects"] = spec.num_objects;
  j["num_classes"] = spec.num_classes;
  j["points_per_object"] = spec.points_per_object;
  j["geometry_noise_sd"] = spec.geometry_noise_sd;
  j["color_noise_sd"] = spec.color_noise_sd;
  j["classes"] = nlohmann::json::array();
  for (int c = 0; c < spec.num_classes; ++c) {
    const auto& s = spec.class_shapes[c];
    const auto& col = spec.class_palette[c];
    j["classes"].push_back({{"color", {col[0], col[1], col[2]}},
                            {"shape", to_string(s.kind)},
                            {"size", {s.size_min, s.size_max}},
                            {"anchor", {s.anchor[0], s.anchor[1], s.anchor[2]}},
                            {"anchor_jitter", s.anchor_jitter}});
  }
  return j;
}

/// Reads a scene spec document. Missing scalar keys take the defaults of
/// default_scene_spec(num_classes); a missing "classes" array takes the
/// default palette and layout.
inline SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  try {
    const int k = j.value("num_classes", 8);
    SceneSpec spec = default_scene_spec(k);
    spec.num_objects = j.value("num_objects", spec.num_objects);
    spec.points_per_object = j.value("points_per_object", spec.points_per_object);
    spec.geometry_noise_sd = j.value("geometry_noise_sd", spec.geometry_noise_sd);
    spec.color_noise_sd = j.value("color_noise_sd", spec.color_noise_sd);
    if (j.contains("classes")) {
      const auto& cls = j.at("classes");
      if (static_cast<int>(cls.size()) != k)
        throw InputError("scene spec: 'classes' needs num_classes entries");
      for (int c = 0; c < k; ++c) {
        const auto& e = cls[c];
        auto col = e.at("color").get<std::vector<double>>();
        auto size = e.at("size").get<std::vector<double>>();
        auto anchor = e.value("anchor", std::vector<double>{0, 0, 0});
        if (col.size() != 3 || size.size() != 2 || anchor.size() != 3)
          throw InputError("scene spec: class entry has wrong arity");
        spec.class_palette[c] = {col[0], col[1], col[2]};
        auto& s = spec.class_shapes[c];
        s.kind = shape_kind_from_string(e.at("shape").get<std::string>());
        s.size_min = size[0];
        s.size_max = size[1];
        s.anchor = {anchor[0], anchor[1], anchor[2]};
        s.anchor_jitter = e.value("anchor_jitter", 0.0);
      }
    }
    validate(spec);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("scene spec: ") + e.what());
  }
}

inline SceneSpec load_scene_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open scene spec " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return scene_spec_from_json(j);
}

// ---------------------------------------------------------------------------
// Normalisation and augmentation

struct NormalizedCloud {
  Mat geo;    // N x 3 in [0,1]
  Mat color;  // N x 3 in [0,1]
};

/// Per-axis min-max scaling of the coordinates; a degenerate axis maps to 0.5.
inline NormalizedCloud normalize_scene(const LabeledPointCloud& cloud) {
  if (cloud.size() < 1) throw InputError("no points");
  NormalizedCloud out{cloud.coords, cloud.colors};
  for (int a = 0; a < 3; ++a) {
    const double lo = cloud.coords.col(a).minCoeff();
    const double hi = cloud.coords.col(a).maxCoeff();
    if (hi > lo) {
      out.geo.col(a) = ((cloud.coords.col(a).array() - lo) / (hi - lo)).cwiseMin(1.0).cwiseMax(0.0);
    } else {
      out.geo.col(a).setConstant(0.5);
    }
  }
  return out;
}

struct AugmentParams {
  double max_rotation_z = 0.0;  // radians
  double jitter_sd = 0.0;
  double color_jitter_sd = 0.0;
  double flip_prob = 0.0;
};

inline void validate(const AugmentParams& p) {
  if (!(p.max_rotation_z >= 0.0) || !(p.jitter_sd >= 0.0) || !(p.color_jitter_sd >= 0.0) ||
      !(p.flip_prob >= 0.0) || p.flip_prob > 1.0)
    throw InputError("augment params must be nonnegative with flip_prob <= 1");
}

/// Rotates every coordinate about the vertical axis through the origin.
inline Mat rotate_z(const Mat& coords, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat out = coords;
  out.col(0) = c * coords.col(0) - s * coords.col(1);
  out.col(1) = s * coords.col(0) + c * coords.col(1);
  return out;
}

inline LabeledPointCloud augment(const LabeledPointCloud& cloud, const AugmentParams& params,
                                 std::uint64_t seed) {
  validate(params);
  Rng rng(mix_seed(seed, 0xa06));
  LabeledPointCloud out = cloud;
  const double angle = uniform(rng, -params.max_rotation_z, params.max_rotation_z);
  if (angle != 0.0) out.coords = rotate_z(out.coords, angle);
  if (uniform(rng, 0.0, 1.0) < params.flip_prob) out.coords.col(0) *= -1.0;
  if (params.jitter_sd > 0.0) {
    for (Eigen::Index i = 0; i < out.coords.size(); ++i)
      out.coords.data()[i] += params.jitter_sd * gaussian(rng);
  }
  if (params.color_jitter_sd > 0.0) {
    for (Eigen::Index i = 0; i < out.colors.size(); ++i) {
      const double c = out.colors.data()[i] + params.color_jitter_sd * gaussian(rng);
      out.colors.data()[i] = std::clamp(c, 0.0, 1.0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text format:
//   pgcc v1 <N> <has_labels: 0|1>
//   x y z r g b [label]     (N lines)
// '#' starts a comment line. Reals are written with 17 significant digits.

inline void save_cloud(const LabeledPointCloud& cloud, const std::filesystem::path& path) {
  validate(cloud);
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "# scene " << (cloud.scene_id.empty() ? "unnamed" : cloud.scene_id) << "\n";
  out << "pgcc v1 " << cloud.size() << " " << (cloud.has_labels() ? 1 : 0) << "\n";
  char buf[64];
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      std::snprintf(buf, sizeof buf, "%.17g ", cloud.coords(i, a));
      out << buf;
    }
    for (int a = 0; a < 3; ++a) {
      std::snprintf(buf, sizeof buf, a < 2 || cloud.has_labels() ? "%.17g " : "%.17g",
                    cloud.colors(i, a));
      out << buf;
    }
    if (cloud.has_labels()) out << (*cloud.labels)[static_cast<std::size_t>(i)];
    out << "\n";
  }
  out.flush();
  if (!out) throw Error("write failed for " + path.string());
}

/// Parses a cloud file. Labels must be < `num_classes` when it is positive.
inline LabeledPointCloud load_cloud(const std::filesystem::path& path, int num_classes = 0) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  const std::string src = path.string();
  LabeledPointCloud cloud;
  cloud.scene_id = path.stem().string();
  std::string line;
  std::size_t lineno = 0;
  long long expected = -1;
  bool has_labels = false;
  Eigen::Index row = 0;
  IndexVec labels;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    std::vector<std::string> tok;
    for (std::string t; ss >> t;) tok.push_back(t);
    if (expected < 0) {
      if (tok.size() != 4 || tok[0] != "pgcc" || tok[1] != "v1")
        throw ParseError(src, lineno, "malformed header, expected 'pgcc v1 N has_labels'");
      try {
        std::size_t pos = 0;
        expected = std::stoll(tok[2], &pos);
        if (pos != tok[2].size() || expected < 0) throw std::invalid_argument("N");
      } catch (const std::exception&) {
        throw ParseError(src, lineno, "malformed header, bad point count '" + tok[2] + "'");
      }
      if (tok[3] != "0" && tok[3] != "1")
        throw ParseError(src, lineno, "malformed header, has_labels must be 0 or 1");
      has_labels = tok[3] == "1";
      if (expected == 0) throw ParseError(src, lineno, "no points");
      cloud.coords.resize(expected, 3);
      cloud.colors.resize(expected, 3);
      continue;
    }
    const std::size_t cols = has_labels ? 7 : 6;
    if (tok.size() != cols)
      throw ParseError(src, lineno,
                       "expected " + std::to_string(cols) + " columns, found " +
                           std::to_string(tok.size()));
    if (row >= expected)
      throw ParseError(src, lineno, "more points than the header declares");
    for (int a = 0; a < 6; ++a) {
      double v;
      try {
        std::size_t pos = 0;
        v = std::stod(tok[a], &pos);
        if (pos != tok[a].size()) throw std::invalid_argument(tok[a]);
      } catch (const std::exception&) {
        throw ParseError(src, lineno, "bad number '" + tok[a] + "'");
      }
      if (!std::isfinite(v)) throw ParseError(src, lineno, "non-finite value");
      if (a < 3) {
        cloud.coords(row, a) = v;
      } else {
        if (v < 0.0 || v > 1.0) throw ParseError(src, lineno, "color channel outside [0,1]");
        cloud.colors(row, a - 3) = v;
      }
    }
    if (has_labels) {
      int l;
      try {
        std::size_t pos = 0;
        l = std::stoi(tok[6], &pos);
        if (pos != tok[6].size()) throw std::invalid_argument(tok[6]);
      } catch (const std::exception&) {
        throw ParseError(src, lineno, "bad label '" + tok[6] + "'");
      }
      if (l < 0 || (num_classes > 0 && l >= num_classes))
        throw ParseError(src, lineno, "label " + std::to_string(l) + " out of range");
      labels.push_back(l);
    }
    ++row;
  }
  if (expected < 0) throw ParseError(src, lineno, "no points");
  if (row != expected)
    throw ParseError(src, lineno,
                     "header declares " + std::to_string(expected) + " points, found " +
                         std::to_string(row));
  if (has_labels) cloud.labels = std::move(labels);
  return cloud;
}

/// All `*.pgcc` files of a directory in lexicographic order.
inline std::vector<std::filesystem::path> list_clouds(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw InputError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pgcc") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace pgcc
