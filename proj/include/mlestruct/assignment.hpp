#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "mlestruct/common.hpp"

namespace mlestruct {

struct AssignmentResult {
  std::vector<int> row_to_col;
  double cost = 0.0;
};

/// Exact minimum-cost assignment for a square matrix of finite reals, via
/// shortest augmenting paths with dual potentials (Jonker-Volgenant class),
/// O(n^3). Deterministic: the first optimal column in scan order wins.
inline AssignmentResult solve_assignment_min(const Matrix& cost) {
  const int n = cost.rows();
  if (n != cost.cols() || n < 1) throw StructuralError("assignment needs a square matrix");
  for (double v : cost.data())
    if (!std::isfinite(v)) throw DomainError("assignment costs must be finite");

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
    } while (j0);
  }

  AssignmentResult res;
  res.row_to_col.assign(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j]) res.row_to_col[p[j] - 1] = j - 1;
  res.cost = 0.0;
  for (int i = 0; i < n; ++i) res.cost += cost(i, res.row_to_col[i]);
  return res;
}

}  // namespace mlestruct
