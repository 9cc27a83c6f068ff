#pragma once

#include <algorithm>
#include <utility>
#include <vector>

#include "mlestruct/common.hpp"

namespace mlestruct {

/// Simple undirected graph over vertices 0..n-1 with an explicit edge list.
/// Edges are stored with i < j in lexicographic order; parallel edges and
/// self loops are rejected.
struct GeneralGraph {
  int num_vertices = 0;
  std::vector<std::pair<int, int>> edges;
  std::vector<std::vector<int>> incident;  // per vertex: edge indices

  GeneralGraph() = default;
  GeneralGraph(int n, std::vector<std::pair<int, int>> edge_list) : num_vertices(n) {
    for (auto& [a, b] : edge_list) {
      if (a == b) throw StructuralError("self loop in graph");
      if (a < 0 || b < 0 || a >= n || b >= n)
        throw StructuralError("edge references missing vertex");
      if (a > b) std::swap(a, b);
    }
    std::sort(edge_list.begin(), edge_list.end());
    if (std::adjacent_find(edge_list.begin(), edge_list.end()) != edge_list.end())
      throw StructuralError("duplicate edge in graph");
    edges = std::move(edge_list);
    incident.assign(n, {});
    for (int e = 0; e < static_cast<int>(edges.size()); ++e) {
      incident[edges[e].first].push_back(e);
      incident[edges[e].second].push_back(e);
    }
  }

  int num_edges() const { return static_cast<int>(edges.size()); }

  int edge_index(int a, int b) const {
    if (a > b) std::swap(a, b);
    auto it = std::lower_bound(edges.begin(), edges.end(), std::make_pair(a, b));
    if (it == edges.end() || *it != std::make_pair(a, b)) return -1;
    return static_cast<int>(it - edges.begin());
  }

  static GeneralGraph complete(int n) {
    std::vector<std::pair<int, int>> e;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) e.emplace_back(i, j);
    return GeneralGraph(n, std::move(e));
  }
};

/// Rectangular 4-connected lattice. Nodes are row-major; the edge list scans
/// nodes row-major emitting the right neighbor first, then the down neighbor.
struct GridGraph {
  int rows = 0;
  int cols = 0;
  std::vector<std::pair<int, int>> edges;

  GridGraph() = default;
  GridGraph(int r, int c) : rows(r), cols(c) {
    if (r < 1 || c < 1) throw StructuralError("grid dimensions must be positive");
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) {
        const int v = i * c + j;
        if (j + 1 < c) edges.emplace_back(v, v + 1);
        if (i + 1 < r) edges.emplace_back(v, v + c);
      }
    }
  }

  int num_nodes() const { return rows * cols; }
  int num_edges() const { return static_cast<int>(edges.size()); }
};

/// Topology argument for the pairwise-binary LP solver: any node/edge graph,
/// not necessarily a lattice.
struct PairwiseGraph {
  int num_nodes = 0;
  std::vector<std::pair<int, int>> edges;

  PairwiseGraph() = default;
  PairwiseGraph(int n, std::vector<std::pair<int, int>> e) : num_nodes(n), edges(std::move(e)) {
    for (auto& [a, b] : edges)
      if (a < 0 || b < 0 || a >= n || b >= n || a == b)
        throw StructuralError("bad edge in pairwise graph");
  }
  explicit PairwiseGraph(const GridGraph& g) : num_nodes(g.num_nodes()), edges(g.edges) {}
};

}  // namespace mlestruct
