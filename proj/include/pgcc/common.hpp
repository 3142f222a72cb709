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
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace pgcc {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using IndexVec = std::vector<int>;
using Rng = std::mt19937_64;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed user input: files, flags, configuration. Maps to exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A parse failure that knows which line of which file it came from.
class ParseError : public InputError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : InputError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Non-finite values during optimisation. Maps to exit code 1.
class NumericError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw Error(what);
}

inline void require_shape(const Mat& m, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw Error(std::string(name) + ": expected " + std::to_string(rows) + "x" +
                std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                std::to_string(m.cols()));
  }
}

/// Mixes a base seed with a stream id (splitmix64 finaliser) so independent
/// consumers of randomness never share a sequence.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Uniform double in [lo, hi). Avoids std::uniform_real_distribution, whose
/// output is implementation-defined.
inline double uniform(Rng& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

/// Standard normal via Box-Muller, portable across standard libraries.
inline double gaussian(Rng& rng) {
  double u1 = uniform(rng, 0.0, 1.0);
  while (u1 <= 0.0) u1 = uniform(rng, 0.0, 1.0);
  const double u2 = uniform(rng, 0.0, 1.0);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform(rng, 0.0, static_cast<double>(n)));
}

/// Fisher-Yates with the portable integer draw above.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_index(rng, i)]);
  }
}

/// Row-wise l2 normalisation. A row that is exactly zero stays zero.
inline Mat normalize_rows(const Mat& y) {
  Mat z = y;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const double n = y.row(i).stableNorm();
    if (n > 0.0) z.row(i) /= n;
  }
  return z;
}

/// Vector-Jacobian product of normalize_rows: given the pre-normalisation
/// rows `y`, their normalised image `z` and upstream gradient `gz`, returns
/// dL/dy = (gz - z (z . gz)) / |y|. Zero rows receive zero gradient.
inline Mat normalize_rows_backward(const Mat& y, const Mat& z, const Mat& gz) {
  Mat gy = Mat::Zero(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const double n = y.row(i).stableNorm();
    if (n > 0.0) {
      const double dot = z.row(i).dot(gz.row(i));
      gy.row(i) = (gz.row(i) - dot * z.row(i)) / n;
    }
  }
  return gy;
}

/// Row-wise log-softmax with max subtraction.
inline Mat log_softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    out.row(i) = logits.row(i).array() - m;
    out.row(i).array() -= std::log(out.row(i).array().exp().sum());
  }
  return out;
}

inline Mat softmax_rows(const Mat& logits) { return log_softmax_rows(logits).array().exp(); }

inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace pgcc
