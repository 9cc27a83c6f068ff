#pragma once

#include <cmath>
#include <limits>
#include <queue>
#include <vector>

#include "mlestruct/common.hpp"
#include "mlestruct/graph.hpp"

namespace mlestruct {

/// Dinic max-flow over real capacities. Residuals below kEps count as
/// saturated.
class MaxFlowGraph {
 public:
  static constexpr double kEps = 1e-12;

  explicit MaxFlowGraph(int num_nodes) : head_(num_nodes) {}

  void add_arc(int u, int v, double cap) {
    if (cap <= 0.0) return;
    head_[u].push_back(static_cast<int>(arcs_.size()));
    arcs_.push_back({v, cap});
    head_[v].push_back(static_cast<int>(arcs_.size()));
    arcs_.push_back({u, 0.0});
  }

  double max_flow(int s, int t) {
    double flow = 0.0;
    while (bfs_levels(s, t)) {
      iter_.assign(head_.size(), 0);
      double f;
      while ((f = augment(s, t, std::numeric_limits<double>::infinity())) > 0.0) flow += f;
    }
    return flow;
  }

  /// Nodes reachable from s in the residual graph (the canonical min cut).
  std::vector<uint8_t> source_side(int s) const {
    std::vector<uint8_t> seen(head_.size(), 0);
    std::queue<int> q;
    q.push(s);
    seen[s] = 1;
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (int a : head_[u]) {
        const Arc& arc = arcs_[a];
        if (arc.cap > kEps && !seen[arc.to]) {
          seen[arc.to] = 1;
          q.push(arc.to);
        }
      }
    }
    return seen;
  }

 private:
  struct Arc {
    int to;
    double cap;
  };

  bool bfs_levels(int s, int t) {
    level_.assign(head_.size(), -1);
    std::queue<int> q;
    q.push(s);
    level_[s] = 0;
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (int a : head_[u]) {
        const Arc& arc = arcs_[a];
        if (arc.cap > kEps && level_[arc.to] < 0) {
          level_[arc.to] = level_[u] + 1;
          q.push(arc.to);
        }
      }
    }
    return level_[t] >= 0;
  }

  double augment(int u, int t, double pushed) {
    if (u == t) return pushed;
    for (size_t& i = iter_[u]; i < head_[u].size(); ++i) {
      const int a = head_[u][i];
      Arc& arc = arcs_[a];
      if (arc.cap > kEps && level_[arc.to] == level_[u] + 1) {
        const double f = augment(arc.to, t, std::min(pushed, arc.cap));
        if (f > 0.0) {
          arc.cap -= f;
          arcs_[a ^ 1].cap += f;
          return f;
        }
      }
    }
    return 0.0;
  }

  std::vector<std::vector<int>> head_;
  std::vector<Arc> arcs_;
  std::vector<int> level_;
  std::vector<size_t> iter_;
};

struct PairwiseLPResult {
  std::vector<double> node_values;     // per node, in {0, 1/2, 1}
  std::vector<double> edge_marginals;  // per edge, 4 joint states (a-label major)
  double objective = 0.0;              // cost of the returned half-integral point
  double roof_dual = 0.0;              // constant + max-flow value; equals objective
};

namespace detail {

/// Cheapest 2x2 transportation completion of an edge marginal with prescribed
/// node marginals (b_i, b_j). Linear in the single free coordinate
/// z = tau(1,1), so an endpoint is optimal; ties take the lower endpoint.
inline void complete_edge_marginal(double bi, double bj, const double* cost, double* out) {
  const double zlo = std::max(0.0, bi + bj - 1.0);
  const double zhi = std::min(bi, bj);
  const double kappa = cost[0] - cost[1] - cost[2] + cost[3];
  const double z = kappa >= 0.0 ? zlo : zhi;
  out[0] = 1.0 - bi - bj + z;
  out[1] = bj - z;
  out[2] = bi - z;
  out[3] = z;
}

}  // namespace detail

/// Exact LP relaxation of pairwise-binary MAP (minimization) over the local
/// polytope via the roof-duality reduction to max-flow. node_costs holds two
/// entries per node, edge_costs four per edge in a-label-major order. The
/// result is a half-integral polytope vertex attaining the LP optimum.
inline PairwiseLPResult solve_pairwise_binary_lp(const std::vector<double>& node_costs,
                                                 const std::vector<double>& edge_costs,
                                                 const PairwiseGraph& g) {
  const int n = g.num_nodes;
  const int ne = static_cast<int>(g.edges.size());
  if (static_cast<int>(node_costs.size()) != 2 * n)
    throw StructuralError("node cost vector must have 2 entries per node");
  if (static_cast<int>(edge_costs.size()) != 4 * ne)
    throw StructuralError("edge cost vector must have 4 entries per edge");

  // Nodes 0..n-1 are the positive copies, n..2n-1 the negated ones.
  const int src = 2 * n, snk = 2 * n + 1;
  MaxFlowGraph flow(2 * n + 2);
  double constant = 0.0;
  std::vector<double> unary(n, 0.0);  // net cost of x_i = 1 relative to x_i = 0

  for (int i = 0; i < n; ++i) {
    constant += node_costs[2 * i];
    unary[i] += node_costs[2 * i + 1] - node_costs[2 * i];
  }

  for (int e = 0; e < ne; ++e) {
    const auto [i, j] = g.edges[e];
    const double a = edge_costs[4 * e + 0], b = edge_costs[4 * e + 1];
    const double c = edge_costs[4 * e + 2], d = edge_costs[4 * e + 3];
    // theta_ij = A + (C-A)[x_i=1] + (D-C)[x_j=1] + P [x_i=0, x_j=1]
    constant += a;
    unary[i] += c - a;
    unary[j] += d - c;
    const double p = b + c - a - d;
    if (p >= 0.0) {
      flow.add_arc(i, j, p / 2.0);
      flow.add_arc(n + j, n + i, p / 2.0);
    } else {
      // P [x_i=0, x_j=1] = P [x_j=1] + (-P) [x_i=1, x_j=1]
      unary[j] += p;
      flow.add_arc(n + i, j, -p / 2.0);
      flow.add_arc(n + j, i, -p / 2.0);
    }
  }

  for (int i = 0; i < n; ++i) {
    const double w = unary[i];
    if (w >= 0.0) {
      flow.add_arc(src, i, w / 2.0);
      flow.add_arc(n + i, snk, w / 2.0);
    } else {
      constant += w;
      flow.add_arc(i, snk, -w / 2.0);
      flow.add_arc(src, n + i, -w / 2.0);
    }
  }

  const double value = flow.max_flow(src, snk);
  const auto s_side = flow.source_side(src);

  PairwiseLPResult res;
  res.node_values.assign(n, 0.5);
  for (int i = 0; i < n; ++i) {
    const bool pos_src = s_side[i] != 0;
    const bool neg_src = s_side[n + i] != 0;
    if (pos_src && !neg_src) res.node_values[i] = 0.0;
    if (!pos_src && neg_src) res.node_values[i] = 1.0;
  }
  res.edge_marginals.assign(static_cast<size_t>(ne) * 4, 0.0);
  for (int e = 0; e < ne; ++e) {
    const auto [i, j] = g.edges[e];
    detail::complete_edge_marginal(res.node_values[i], res.node_values[j], &edge_costs[4 * e],
                                   &res.edge_marginals[4 * e]);
  }
  res.roof_dual = constant + value;
  res.objective = 0.0;
  for (int i = 0; i < n; ++i)
    res.objective += (1.0 - res.node_values[i]) * node_costs[2 * i] +
                     res.node_values[i] * node_costs[2 * i + 1];
  for (size_t k = 0; k < res.edge_marginals.size(); ++k)
    res.objective += res.edge_marginals[k] * edge_costs[k];
  return res;
}

}  // namespace mlestruct
