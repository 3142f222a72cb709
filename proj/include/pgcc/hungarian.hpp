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

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "pgcc/common.hpp"

namespace pgcc {

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct Assignment {
  std::int64_t cost = 0;
  std::vector<int> row_to_col;
};

/// Minimum-cost perfect matching on a square integer cost matrix
/// (shortest augmenting paths with potentials, O(n^3)).
inline Assignment solve_assignment(const CountMatrix& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw Error("solve_assignment: cost matrix must be square");
  const std::int64_t inf = std::numeric_limits<std::int64_t>::max() / 4;
  // 1-based potentials and matching as in the classic formulation.
  std::vector<std::int64_t> u(n + 1, 0), v(n + 1, 0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      std::int64_t delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const std::int64_t cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment a;
  a.row_to_col.assign(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] != 0) a.row_to_col[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  for (int i = 0; i < n; ++i) a.cost += cost(i, a.row_to_col[static_cast<std::size_t>(i)]);
  return a;
}

/// Among all minimum-cost matchings, the one whose row_to_col vector is
/// lexicographically smallest. Fixes rows in order, keeping the first
/// column that still admits an optimal completion.
inline Assignment solve_assignment_lexmin(const CountMatrix& cost) {
  const int n = static_cast<int>(cost.rows());
  const Assignment best = solve_assignment(cost);
  if (n == 0) return best;
  const std::int64_t span = cost.maxCoeff() - cost.minCoeff();
  const std::int64_t big = span * n + 1;
  CountMatrix work = cost;
  std::vector<char> col_taken(static_cast<std::size_t>(n), 0);
  Assignment out;
  out.row_to_col.assign(static_cast<std::size_t>(n), -1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (col_taken[static_cast<std::size_t>(j)]) continue;
      CountMatrix trial = work;
      for (int c = 0; c < n; ++c)
        if (c != j) trial(i, c) = cost(i, c) + big;
      if (solve_assignment(trial).cost == best.cost) {
        work = trial;
        out.row_to_col[static_cast<std::size_t>(i)] = j;
        col_taken[static_cast<std::size_t>(j)] = 1;
        break;
      }
    }
  }
  out.cost = best.cost;
  return out;
}

}  // namespace pgcc
