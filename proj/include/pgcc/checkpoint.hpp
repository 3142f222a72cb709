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

// Checkpoint container, plain text:
//
//   pgcc-checkpoint v1
//   [config]
//   key = value ...                  (to_config_text)
//   [params]
//   tensor <name> <rows> <cols>      then <rows> lines of <cols> reals
//   ...
//   [optimizer]
//   step <n>
//   tensor m.<name> ... / tensor v.<name> ...
//   [log]
//   <train log csv, header included>
//   [end]
//
// Reals use %.17g, which round-trips IEEE doubles exactly.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "pgcc/trainer.hpp"

namespace pgcc {

struct Checkpoint {
  TrainConfig config;
  TrainState state;
};

namespace detail {

inline void write_tensor(std::ostream& out, const std::string& name, const Mat& m) {
  out << "tensor " << name << " " << m.rows() << " " << m.cols() << "\n";
  char buf[40];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, j == 0 ? "%.17g" : " %.17g", m(i, j));
      out << buf;
    }
    out << "\n";
  }
}

class LineReader {
 public:
  LineReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  std::string next() {
    std::string line;
    if (!std::getline(in_, line)) throw ParseError(source_, lineno_, "unexpected end of checkpoint");
    ++lineno_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  }

  void expect(const std::string& want) {
    const std::string got = next();
    if (got != want) fail("expected '" + want + "', found '" + got + "'");
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(source_, lineno_, what); }
  const std::string& source() const { return source_; }

  void read_tensor(const std::string& name, Mat& m) {
    std::istringstream head(next());
    std::string tag, got_name;
    Eigen::Index rows = -1, cols = -1;
    head >> tag >> got_name >> rows >> cols;
    if (tag != "tensor" || got_name != name) fail("expected tensor '" + name + "'");
    if (rows != m.rows() || cols != m.cols())
      fail("tensor '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
           ", config implies " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    for (Eigen::Index i = 0; i < rows; ++i) {
      const std::string line = next();
      const char* p = line.c_str();
      for (Eigen::Index j = 0; j < cols; ++j) {
        char* end = nullptr;
        m(i, j) = std::strtod(p, &end);
        if (end == p) fail("tensor '" + name + "': too few values");
        p = end;
      }
      while (*p == ' ') ++p;
      if (*p != '\0') fail("tensor '" + name + "': too many values");
    }
  }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t lineno_ = 0;
};

}  // namespace detail

inline void write_checkpoint(const Checkpoint& ck, std::ostream& out) {
  out << "pgcc-checkpoint v1\n[config]\n" << to_config_text(ck.config) << "[params]\n";
  ck.state.params.for_each_named([&](const std::string& name, const Mat& t) { detail::write_tensor(out, name, t); });
  out << "[optimizer]\nstep " << ck.state.opt.step << "\n";
  ck.state.opt.m.for_each_named(
      [&](const std::string& name, const Mat& t) { detail::write_tensor(out, "m." + name, t); });
  ck.state.opt.v.for_each_named(
      [&](const std::string& name, const Mat& t) { detail::write_tensor(out, "v." + name, t); });
  out << "[log]\n";
  write_train_log(ck.state.log, out);
  out << "[end]\n";
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  write_checkpoint(ck, out);
  out.flush();
  if (!out) throw Error("write failed for checkpoint " + path.string() + " (disk full?)");
}

inline Checkpoint read_checkpoint(std::istream& in, const std::string& source) {
  detail::LineReader rd(in, source);
  rd.expect("pgcc-checkpoint v1");
  rd.expect("[config]");
  std::string cfg_text;
  for (std::string line = rd.next(); line != "[params]"; line = rd.next()) cfg_text += line + "\n";
  std::istringstream cfg_in(cfg_text);
  Checkpoint ck;
  ck.config = parse_config(cfg_in, source + " [config]");
  ck.state.params = ModelParams::init(ck.config.shape, 0);
  ck.state.params.for_each_named([&](const std::string& name, Mat& m) { rd.read_tensor(name, m); });
  rd.expect("[optimizer]");
  {
    std::istringstream ss(rd.next());
    std::string tag;
    ss >> tag >> ck.state.opt.step;
    if (tag != "step" || !ss) rd.fail("expected 'step <n>'");
  }
  ck.state.opt.m = ck.state.params.zeros_like();
  ck.state.opt.v = ck.state.params.zeros_like();
  ck.state.opt.m.for_each_named([&](const std::string& name, Mat& m) { rd.read_tensor("m." + name, m); });
  ck.state.opt.v.for_each_named([&](const std::string& name, Mat& m) { rd.read_tensor("v." + name, m); });
  rd.expect("[log]");
  std::string log_text;
  for (std::string line = rd.next(); line != "[end]"; line = rd.next()) log_text += line + "\n";
  std::istringstream header_only(log_text);
  std::string first, second;
  std::getline(header_only, first);
  if (std::getline(header_only, second) && !second.empty()) {
    std::istringstream log_in(log_text);
    ck.state.log = read_train_log(log_in, source + " [log]");
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  return read_checkpoint(in, path.string());
}

/// FNV-1a over the raw bytes of every parameter tensor.
inline std::uint64_t params_hash(const ModelParams& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  p.for_each_tensor([&](const Mat& m) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(m.size()) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  });
  return h;
}

}  // namespace pgcc
