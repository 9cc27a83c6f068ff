#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "mlestruct/assignment.hpp"
#include "mlestruct/common.hpp"
#include "mlestruct/matching_dp.hpp"
#include "mlestruct/model.hpp"
#include "mlestruct/qpbo.hpp"

namespace mlestruct {

/// A vertex of the structure polytope together with the value of the solved
/// problem. `structure` carries the integral encoding when one exists; QPBO
/// may return half-integral coordinates, in which case it stays empty.
struct VertexSolution {
  Pseudomarginals vertex;
  std::vector<int> structure;
  double objective = 0.0;
  bool exact = true;
};

/// Optimal permutation for an n x n weight matrix. Maximizes when asked,
/// minimizes otherwise; exact for any finite weights.
inline VertexSolution solve_bipartite_matching(const Matrix& weights, bool maximize) {
  Matrix cost = weights;
  if (maximize)
    for (double& v : cost.data()) v = -v;
  const AssignmentResult a = solve_assignment_min(cost);
  VertexSolution sol;
  sol.structure = a.row_to_col;
  sol.objective = maximize ? -a.cost : a.cost;
  const int n = weights.rows();
  sol.vertex.edge.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) sol.vertex.edge[i * n + a.row_to_col[i]] = 1.0;
  return sol;
}

/// Maximum-weight perfect matching on a small general graph (subset DP,
/// |V| <= 16). Throws InfeasibleError when no perfect matching exists.
inline VertexSolution solve_general_perfect_matching(const std::vector<double>& edge_weights,
                                                     const GeneralGraph& graph) {
  for (double w : edge_weights)
    if (!std::isfinite(w)) throw DomainError("matching weights must be finite");
  const auto r = matching_dp::max_weight_perfect_matching(graph, edge_weights);
  if (!r.feasible) throw InfeasibleError("graph admits no perfect matching");
  VertexSolution sol;
  sol.structure = r.mate;
  sol.objective = r.weight;
  sol.vertex.edge.assign(graph.num_edges(), 0.0);
  for (int v = 0; v < graph.num_vertices; ++v)
    if (r.mate[v] > v) sol.vertex.edge[graph.edge_index(v, r.mate[v])] = 1.0;
  return sol;
}

// ---------------------------------------------------------------------------
// Linear minimization oracle (the Frank-Wolfe subproblem)
// ---------------------------------------------------------------------------

/// Minimizes <vertex, costs> over the model's polytope: assignment for
/// bipartite matchings, subset DP for general matchings, QPBO for grids.
inline VertexSolution solve_linear_minimization(const StructuredModel& model,
                                                const Pseudomarginals& costs) {
  check_tau_shape(costs, model);
  switch (model.kind) {
    case ModelKind::BipartiteMatching: {
      Matrix c(model.n, model.n);
      c.data() = costs.edge;
      return solve_bipartite_matching(c, /*maximize=*/false);
    }
    case ModelKind::GeneralPerfectMatching: {
      std::vector<double> w(costs.edge.size());
      for (size_t e = 0; e < w.size(); ++e) w[e] = -costs.edge[e];
      VertexSolution sol = solve_general_perfect_matching(w, model.graph);
      sol.objective = -sol.objective;
      return sol;
    }
    case ModelKind::PairwiseBinaryGrid: {
      const PairwiseLPResult lp =
          solve_pairwise_binary_lp(costs.node, costs.edge, PairwiseGraph(model.grid));
      VertexSolution sol;
      sol.objective = lp.objective;
      sol.vertex.node.resize(costs.node.size());
      for (int v = 0; v < model.grid.num_nodes(); ++v) {
        sol.vertex.node[2 * v] = 1.0 - lp.node_values[v];
        sol.vertex.node[2 * v + 1] = lp.node_values[v];
      }
      sol.vertex.edge = lp.edge_marginals;
      bool integral = true;
      for (double b : lp.node_values) integral = integral && (b == 0.0 || b == 1.0);
      if (integral) {
        sol.structure.resize(model.grid.num_nodes());
        for (int v = 0; v < model.grid.num_nodes(); ++v)
          sol.structure[v] = lp.node_values[v] > 0.5 ? 1 : 0;
      }
      return sol;
    }
  }
  throw StructuralError("unknown model kind");
}

using MapOracle = std::function<VertexSolution(const StructuredModel&, const Pseudomarginals&)>;

inline MapOracle default_map_oracle() {
  return [](const StructuredModel& model, const Pseudomarginals& costs) {
    return solve_linear_minimization(model, costs);
  };
}

// ---------------------------------------------------------------------------
// Exhaustive MAP (test oracle and desk-scale decoding)
// ---------------------------------------------------------------------------

/// Exhaustive argmax of the structure score. Caps: 8x8 bipartite, 8-node
/// general graphs, 2^20 grid configurations. Ties resolve to the
/// lexicographically smallest structure.
inline VertexSolution brute_force_map(const StructuredModel& model,
                                      const std::vector<double>& theta) {
  check_theta(model, theta);
  VertexSolution best;
  best.objective = -std::numeric_limits<double>::infinity();
  switch (model.kind) {
    case ModelKind::BipartiteMatching: {
      if (model.n > 8) throw SizeCapError("brute_force_map: bipartite cap is n <= 8");
      const std::vector<double> scores = matching_edge_scores(model, theta);
      std::vector<int> perm(model.n);
      std::iota(perm.begin(), perm.end(), 0);
      do {
        double s = 0.0;
        for (int i = 0; i < model.n; ++i) s += scores[i * model.n + perm[i]];
        if (s > best.objective) {
          best.objective = s;
          best.structure = perm;
        }
      } while (std::next_permutation(perm.begin(), perm.end()));
      break;
    }
    case ModelKind::GeneralPerfectMatching: {
      if (model.graph.num_vertices > 8)
        throw SizeCapError("brute_force_map: general matching cap is 8 nodes");
      const std::vector<double> scores = matching_edge_scores(model, theta);
      const auto all = matching_dp::enumerate_perfect_matchings(model.graph);
      if (all.empty()) throw InfeasibleError("graph admits no perfect matching");
      for (const auto& mate : all) {
        double s = 0.0;
        for (int v = 0; v < model.graph.num_vertices; ++v)
          if (mate[v] > v) s += scores[model.graph.edge_index(v, mate[v])];
        if (s > best.objective) {
          best.objective = s;
          best.structure = mate;
        }
      }
      break;
    }
    case ModelKind::PairwiseBinaryGrid: {
      const int nn = model.grid.num_nodes();
      if (nn > 20) throw SizeCapError("brute_force_map: grid cap is 2^20 configurations");
      const GridScores sc = grid_scores(model, theta);
      std::vector<int> labels(nn);
      for (uint32_t mask = 0; mask < (1u << nn); ++mask) {
        for (int v = 0; v < nn; ++v) labels[v] = (mask >> (nn - 1 - v)) & 1u;
        double s = 0.0;
        for (int v = 0; v < nn; ++v) s += sc.node[2 * v + labels[v]];
        for (int e = 0; e < model.grid.num_edges(); ++e) {
          const auto [a, b] = model.grid.edges[e];
          s += sc.edge[4 * e + labels[a] * 2 + labels[b]];
        }
        if (s > best.objective) {
          best.objective = s;
          best.structure = labels;
        }
      }
      break;
    }
  }
  best.vertex = embed_observation(model, best.structure);
  return best;
}

/// MAP decoding with the exact combinatorial solvers (maximizes the score).
inline VertexSolution map_decode(const StructuredModel& model, const std::vector<double>& theta) {
  switch (model.kind) {
    case ModelKind::BipartiteMatching:
      return solve_bipartite_matching(edge_weight_matrix(model, theta), /*maximize=*/true);
    case ModelKind::GeneralPerfectMatching:
      return solve_general_perfect_matching(matching_edge_scores(model, theta), model.graph);
    case ModelKind::PairwiseBinaryGrid: {
      // LP relaxation via QPBO; integral on the instances this tool targets.
      const GridScores sc = grid_scores(model, theta);
      Pseudomarginals costs;
      costs.node.resize(sc.node.size());
      costs.edge.resize(sc.edge.size());
      for (size_t i = 0; i < sc.node.size(); ++i) costs.node[i] = -sc.node[i];
      for (size_t i = 0; i < sc.edge.size(); ++i) costs.edge[i] = -sc.edge[i];
      VertexSolution sol = solve_linear_minimization(model, costs);
      sol.objective = -sol.objective;
      if (sol.structure.empty()) {
        // half-integral LP answer: round undecided nodes to label 0
        sol.structure.resize(model.grid.num_nodes());
        for (int v = 0; v < model.grid.num_nodes(); ++v)
          sol.structure[v] = sol.vertex.node[2 * v + 1] > 0.5 ? 1 : 0;
        sol.exact = false;
      }
      return sol;
    }
  }
  throw StructuralError("unknown model kind");
}

}  // namespace mlestruct
