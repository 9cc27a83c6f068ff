#pragma once

#include <bit>
#include <cstdint>
#include <limits>
#include <vector>

#include "mlestruct/common.hpp"
#include "mlestruct/graph.hpp"

namespace mlestruct {

/// Exact perfect-matching routines on small general graphs via subset DP.
/// State space is 2^|V|, so graphs are capped at 16 vertices. Ties are broken
/// lexicographically: the lowest unmatched vertex is matched to the smallest
/// partner among the maximizers.
namespace matching_dp {

constexpr int kMaxVertices = 16;

inline void check_size(const GeneralGraph& g) {
  if (g.num_vertices > kMaxVertices)
    throw SizeCapError("general matching limited to " + std::to_string(kMaxVertices) +
                       " vertices, got " + std::to_string(g.num_vertices));
}

/// Adjacency bitmasks; adj[v] has bit u set iff (v,u) is an edge.
inline std::vector<uint32_t> adjacency_masks(const GeneralGraph& g, int excluded_edge = -1) {
  std::vector<uint32_t> adj(g.num_vertices, 0);
  for (int e = 0; e < g.num_edges(); ++e) {
    if (e == excluded_edge) continue;
    const auto [a, b] = g.edges[e];
    adj[a] |= 1u << b;
    adj[b] |= 1u << a;
  }
  return adj;
}

/// feasible[mask] = subgraph induced on mask admits a perfect matching.
inline std::vector<uint8_t> feasibility_table(int n, const std::vector<uint32_t>& adj) {
  std::vector<uint8_t> feasible(size_t{1} << n, 0);
  feasible[0] = 1;
  for (uint32_t mask = 1; mask < (1u << n); ++mask) {
    const int i = std::countr_zero(mask);
    uint32_t cand = mask & adj[i] & ~((1u << (i + 1)) - 1);
    while (cand) {
      const int j = std::countr_zero(cand);
      cand &= cand - 1;
      if (feasible[mask & ~(1u << i) & ~(1u << j)]) {
        feasible[mask] = 1;
        break;
      }
    }
  }
  return feasible;
}

inline bool has_perfect_matching(const GeneralGraph& g, int excluded_edge = -1) {
  check_size(g);
  if (g.num_vertices % 2 != 0) return false;
  const auto adj = adjacency_masks(g, excluded_edge);
  const auto feasible = feasibility_table(g.num_vertices, adj);
  return feasible[(1u << g.num_vertices) - 1] != 0;
}

struct MaxWeightResult {
  std::vector<int> mate;  // mate[v] = partner, or -1 if infeasible
  double weight = 0.0;
  bool feasible = false;
};

/// Maximum-weight perfect matching. Edges listed in `required` are forced
/// into the matching; edges in `excluded` are removed. Weights may be any
/// finite reals.
inline MaxWeightResult max_weight_perfect_matching(const GeneralGraph& g,
                                                   const std::vector<double>& edge_weights,
                                                   const std::vector<int>& required = {},
                                                   const std::vector<int>& excluded = {}) {
  check_size(g);
  const int n = g.num_vertices;
  if (static_cast<int>(edge_weights.size()) != g.num_edges())
    throw StructuralError("edge weight vector does not match edge count");
  MaxWeightResult result;
  if (n % 2 != 0) return result;

  std::vector<uint8_t> removed(g.num_edges(), 0);
  for (int e : excluded) removed[e] = 1;

  result.mate.assign(n, -1);
  uint32_t full = n == 32 ? ~0u : (1u << n) - 1;
  double forced_weight = 0.0;
  for (int e : required) {
    const auto [a, b] = g.edges[e];
    if (removed[e] || result.mate[a] != -1 || result.mate[b] != -1) {
      result.mate.clear();
      return result;  // contradictory requirements
    }
    result.mate[a] = b;
    result.mate[b] = a;
    forced_weight += edge_weights[e];
    full &= ~(1u << a);
    full &= ~(1u << b);
  }

  std::vector<uint32_t> adj(n, 0);
  for (int e = 0; e < g.num_edges(); ++e) {
    if (removed[e]) continue;
    const auto [a, b] = g.edges[e];
    adj[a] |= 1u << b;
    adj[b] |= 1u << a;
  }

  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<double> best(size_t{1} << n, kNegInf);
  best[0] = 0.0;
  for (uint32_t mask = 1; mask <= full; ++mask) {
    if ((mask & full) != mask) continue;
    const int i = std::countr_zero(mask);
    uint32_t cand = mask & adj[i] & ~((1u << (i + 1)) - 1);
    double bv = kNegInf;
    while (cand) {
      const int j = std::countr_zero(cand);
      cand &= cand - 1;
      const double sub = best[mask & ~(1u << i) & ~(1u << j)];
      if (sub == kNegInf) continue;
      const double v = sub + edge_weights[g.edge_index(i, j)];
      if (v > bv) bv = v;
    }
    best[mask] = bv;
  }
  if (best[full] == kNegInf) {
    result.mate.clear();
    return result;
  }

  // Reconstruct; scanning partners in ascending order and accepting the first
  // exact hit reproduces the lexicographic tie-break.
  uint32_t mask = full;
  while (mask) {
    const int i = std::countr_zero(mask);
    uint32_t cand = mask & adj[i] & ~((1u << (i + 1)) - 1);
    bool found = false;
    while (cand) {
      const int j = std::countr_zero(cand);
      cand &= cand - 1;
      const uint32_t sub = mask & ~(1u << i) & ~(1u << j);
      if (best[sub] == kNegInf) continue;
      if (best[sub] + edge_weights[g.edge_index(i, j)] == best[mask]) {
        result.mate[i] = j;
        result.mate[j] = i;
        mask = sub;
        found = true;
        break;
      }
    }
    if (!found) throw InvariantError("matching DP reconstruction failed");
  }
  result.weight = forced_weight + best[full];
  result.feasible = true;
  return result;
}

/// All perfect matchings of g, as mate vectors, in lexicographic order.
/// Intended for oracles; graphs stay within the DP size cap.
inline std::vector<std::vector<int>> enumerate_perfect_matchings(const GeneralGraph& g) {
  check_size(g);
  std::vector<std::vector<int>> out;
  const int n = g.num_vertices;
  if (n % 2 != 0) return out;
  const auto adj = adjacency_masks(g);
  std::vector<int> mate(n, -1);
  auto rec = [&](auto&& self, uint32_t mask) -> void {
    if (mask == 0) {
      out.push_back(mate);
      return;
    }
    const int i = std::countr_zero(mask);
    uint32_t cand = mask & adj[i] & ~((1u << (i + 1)) - 1);
    while (cand) {
      const int j = std::countr_zero(cand);
      cand &= cand - 1;
      mate[i] = j;
      mate[j] = i;
      self(self, mask & ~(1u << i) & ~(1u << j));
      mate[i] = mate[j] = -1;
    }
  };
  rec(rec, n == 32 ? ~0u : (1u << n) - 1);
  return out;
}

}  // namespace matching_dp
}  // namespace mlestruct
