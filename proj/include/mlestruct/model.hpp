#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <set>
#include <utility>
#include <vector>

#include "mlestruct/common.hpp"
#include "mlestruct/graph.hpp"
#include "mlestruct/matching_dp.hpp"

namespace mlestruct {

enum class ModelKind { BipartiteMatching, GeneralPerfectMatching, PairwiseBinaryGrid };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::BipartiteMatching: return "bipartite_matching";
    case ModelKind::GeneralPerfectMatching: return "general_matching";
    case ModelKind::PairwiseBinaryGrid: return "grid";
  }
  return "?";
}

/// Feature maps for one conditioning input X.
struct Features {
  std::vector<Matrix> matching;  // K matrices, n x n (bipartite) or |V| x |V| symmetric
  Matrix grid_node;              // num_nodes x C
  Matrix grid_edge;              // num_edges x D
};

/// Edges fixed a priori for general matchings: forbidden edges belong to no
/// perfect matching, forced edges to all of them.
struct ClampInfo {
  std::vector<uint8_t> forced;
  std::vector<uint8_t> forbidden;

  bool is_free(int e) const { return !forced[e] && !forbidden[e]; }
  bool any() const {
    for (size_t e = 0; e < forced.size(); ++e)
      if (forced[e] || forbidden[e]) return true;
    return false;
  }
};

struct StructuredModel {
  ModelKind kind = ModelKind::BipartiteMatching;
  int n = 0;           // bipartite: size of each side
  GeneralGraph graph;  // general matchings
  GridGraph grid;      // grid CRFs
  int K = 0;           // matching feature count
  int C = 0, D = 0;    // grid node/edge feature dimensions
  std::shared_ptr<const Features> features;
  std::shared_ptr<const ClampInfo> clamps;  // general matchings only

  int num_match_nodes() const {
    return kind == ModelKind::BipartiteMatching ? 2 * n : graph.num_vertices;
  }
  int num_edge_slots() const {
    switch (kind) {
      case ModelKind::BipartiteMatching: return n * n;
      case ModelKind::GeneralPerfectMatching: return graph.num_edges();
      case ModelKind::PairwiseBinaryGrid: return grid.num_edges();
    }
    return 0;
  }
  int num_parameters() const {
    return kind == ModelKind::PairwiseBinaryGrid ? 2 * C + 4 * D : K;
  }
  bool is_matching() const { return kind != ModelKind::PairwiseBinaryGrid; }
};

/// Pseudomarginal (or conforming gradient/vertex) coordinates.
///   matchings: edge[e] is the scalar tau_ij per edge slot
///   grids:     node[v*2 + label], edge[e*4 + (label_a*2 + label_b)]
struct Pseudomarginals {
  std::vector<double> node;
  std::vector<double> edge;
};

inline Pseudomarginals zeros_like_tau(const StructuredModel& m) {
  Pseudomarginals t;
  if (m.kind == ModelKind::PairwiseBinaryGrid) {
    t.node.assign(static_cast<size_t>(m.grid.num_nodes()) * 2, 0.0);
    t.edge.assign(static_cast<size_t>(m.grid.num_edges()) * 4, 0.0);
  } else {
    t.edge.assign(m.num_edge_slots(), 0.0);
  }
  return t;
}

inline double tau_dot(const Pseudomarginals& a, const Pseudomarginals& b) {
  double s = 0.0;
  if (!a.node.empty() || !b.node.empty()) s += dot(a.node, b.node);
  s += dot(a.edge, b.edge);
  return s;
}

inline void tau_axpy(Pseudomarginals& y, double alpha, const Pseudomarginals& x) {
  if (!x.node.empty()) axpy(y.node, alpha, x.node);
  axpy(y.edge, alpha, x.edge);
}

/// y <- (1-eta) y + eta x
inline void tau_mix(Pseudomarginals& y, double eta, const Pseudomarginals& x) {
  for (size_t i = 0; i < y.node.size(); ++i) y.node[i] += eta * (x.node[i] - y.node[i]);
  for (size_t i = 0; i < y.edge.size(); ++i) y.edge[i] += eta * (x.edge[i] - y.edge[i]);
}

inline Pseudomarginals tau_interpolate(const Pseudomarginals& a, const Pseudomarginals& b,
                                       double eta) {
  Pseudomarginals r = a;
  tau_mix(r, eta, b);
  return r;
}

/// Reweighting (counting-number) vector: one entry per node for matchings,
/// one per edge for grids. Bipartite node order is all left nodes then all
/// right nodes.
struct Reweighting {
  std::vector<double> values;
};

inline int reweighting_length(const StructuredModel& m) {
  return m.kind == ModelKind::PairwiseBinaryGrid ? m.grid.num_edges() : m.num_match_nodes();
}

inline Reweighting uniform_rho(const StructuredModel& m, double value) {
  if (value < 0.0 || value > 1.0) throw DomainError("rho entries must lie in [0,1]");
  return Reweighting{std::vector<double>(reweighting_length(m), value)};
}

/// Bethe for matchings, edge appearance probability 1/2 for grids.
inline Reweighting default_rho(const StructuredModel& m) {
  return uniform_rho(m, m.kind == ModelKind::PairwiseBinaryGrid ? 0.5 : 1.0);
}

inline void check_rho(const Reweighting& rho, const StructuredModel& m) {
  if (static_cast<int>(rho.values.size()) != reweighting_length(m))
    throw StructuralError("reweighting vector length does not match model");
  for (double v : rho.values)
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("rho entries must lie in [0,1]");
}

// ---------------------------------------------------------------------------
// Model builders
// ---------------------------------------------------------------------------

inline void check_matching_features(const std::vector<Matrix>& maps, int rows, int cols) {
  for (const Matrix& f : maps)
    if (f.rows() != rows || f.cols() != cols)
      throw StructuralError("feature matrix does not conform to topology dimensions");
}

inline StructuredModel make_bipartite_model(int n, std::shared_ptr<const Features> features) {
  if (n < 1) throw StructuralError("bipartite model needs n >= 1");
  StructuredModel m;
  m.kind = ModelKind::BipartiteMatching;
  m.n = n;
  m.K = static_cast<int>(features->matching.size());
  check_matching_features(features->matching, n, n);
  m.features = std::move(features);
  return m;
}

inline ClampInfo clamp_analysis(const StructuredModel& model);

inline StructuredModel make_general_matching_model(GeneralGraph graph,
                                                   std::shared_ptr<const Features> features) {
  matching_dp::check_size(graph);
  if (graph.num_vertices % 2 != 0)
    throw InfeasibleError("general matching graph must have an even number of nodes");
  StructuredModel m;
  m.kind = ModelKind::GeneralPerfectMatching;
  m.graph = std::move(graph);
  m.K = static_cast<int>(features->matching.size());
  check_matching_features(features->matching, m.graph.num_vertices, m.graph.num_vertices);
  m.features = std::move(features);
  if (!matching_dp::has_perfect_matching(m.graph))
    throw InfeasibleError("graph admits no perfect matching");
  m.clamps = std::make_shared<const ClampInfo>(clamp_analysis(m));
  return m;
}

inline StructuredModel make_grid_model(int rows, int cols,
                                       std::shared_ptr<const Features> features) {
  StructuredModel m;
  m.kind = ModelKind::PairwiseBinaryGrid;
  m.grid = GridGraph(rows, cols);
  m.C = features->grid_node.cols();
  m.D = features->grid_edge.cols();
  if (features->grid_node.rows() != m.grid.num_nodes())
    throw StructuralError("node feature matrix does not conform to grid");
  if (features->grid_edge.rows() != m.grid.num_edges())
    throw StructuralError("edge feature matrix does not conform to grid");
  m.features = std::move(features);
  return m;
}

// ---------------------------------------------------------------------------
// clamp_analysis
// ---------------------------------------------------------------------------

/// Classifies each edge of a matching model as forced (in every perfect
/// matching), forbidden (in none), or free. One feasibility matching per
/// edge, as many as two DP passes each.
inline ClampInfo clamp_analysis(const StructuredModel& model) {
  if (!model.is_matching()) throw StructuralError("clamp_analysis requires a matching model");
  ClampInfo info;
  const int ne = model.num_edge_slots();
  info.forced.assign(ne, 0);
  info.forbidden.assign(ne, 0);
  if (model.kind == ModelKind::BipartiteMatching) {
    // complete bipartite graph: every edge is exchangeable unless n == 1
    if (model.n == 1) info.forced[0] = 1;
    return info;
  }
  const GeneralGraph& g = model.graph;
  if (g.num_vertices % 2 != 0) {
    throw InfeasibleError("odd graphs admit no perfect matching");
  }
  const auto adj = matching_dp::adjacency_masks(g);
  const auto feasible = matching_dp::feasibility_table(g.num_vertices, adj);
  const uint32_t full = (1u << g.num_vertices) - 1;
  if (!feasible[full]) throw InfeasibleError("graph admits no perfect matching");
  for (int e = 0; e < ne; ++e) {
    const auto [a, b] = g.edges[e];
    const bool in_some = feasible[full & ~(1u << a) & ~(1u << b)] != 0;
    if (!in_some) {
      info.forbidden[e] = 1;
      continue;
    }
    if (!matching_dp::has_perfect_matching(g, /*excluded_edge=*/e)) info.forced[e] = 1;
  }
  return info;
}

// ---------------------------------------------------------------------------
// Polytope membership
// ---------------------------------------------------------------------------

inline void check_tau_shape(const Pseudomarginals& tau, const StructuredModel& model) {
  if (model.kind == ModelKind::PairwiseBinaryGrid) {
    if (static_cast<int>(tau.node.size()) != 2 * model.grid.num_nodes() ||
        static_cast<int>(tau.edge.size()) != 4 * model.grid.num_edges())
      throw StructuralError("pseudomarginal dimensions do not conform to grid model");
  } else {
    if (!tau.node.empty() || static_cast<int>(tau.edge.size()) != model.num_edge_slots())
      throw StructuralError("pseudomarginal dimensions do not conform to matching model");
  }
}

inline bool validate_local_polytope(const Pseudomarginals& tau, const StructuredModel& model,
                                    double tol = 1e-9) {
  check_tau_shape(tau, model);
  auto in_unit = [tol](double v) { return v >= -tol && v <= 1.0 + tol; };
  for (double v : tau.node)
    if (!in_unit(v)) return false;
  for (double v : tau.edge)
    if (!in_unit(v)) return false;

  switch (model.kind) {
    case ModelKind::BipartiteMatching: {
      const int n = model.n;
      for (int i = 0; i < n; ++i) {
        double rs = 0.0;
        for (int j = 0; j < n; ++j) rs += tau.edge[i * n + j];
        if (std::abs(rs - 1.0) > tol) return false;
      }
      for (int j = 0; j < n; ++j) {
        double cs = 0.0;
        for (int i = 0; i < n; ++i) cs += tau.edge[i * n + j];
        if (std::abs(cs - 1.0) > tol) return false;
      }
      return true;
    }
    case ModelKind::GeneralPerfectMatching: {
      for (int v = 0; v < model.graph.num_vertices; ++v) {
        double s = 0.0;
        for (int e : model.graph.incident[v]) s += tau.edge[e];
        if (std::abs(s - 1.0) > tol) return false;
      }
      if (model.clamps) {
        for (int e = 0; e < model.graph.num_edges(); ++e) {
          if (model.clamps->forced[e] && std::abs(tau.edge[e] - 1.0) > tol) return false;
          if (model.clamps->forbidden[e] && std::abs(tau.edge[e]) > tol) return false;
        }
      }
      return true;
    }
    case ModelKind::PairwiseBinaryGrid: {
      const int nn = model.grid.num_nodes();
      for (int v = 0; v < nn; ++v)
        if (std::abs(tau.node[2 * v] + tau.node[2 * v + 1] - 1.0) > tol) return false;
      for (int e = 0; e < model.grid.num_edges(); ++e) {
        const auto [a, b] = model.grid.edges[e];
        const double* te = &tau.edge[4 * e];
        for (int la = 0; la < 2; ++la)
          if (std::abs(te[la * 2] + te[la * 2 + 1] - tau.node[2 * a + la]) > tol) return false;
        for (int lb = 0; lb < 2; ++lb)
          if (std::abs(te[lb] + te[2 + lb] - tau.node[2 * b + lb]) > tol) return false;
      }
      return true;
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Uniform for bipartite matchings and grids. For general matchings, averages
/// the distinct perfect matchings found by requiring each free edge in and
/// out in turn, which yields a strictly interior point on free edges.
inline Pseudomarginals init_pseudomarginals(const StructuredModel& model) {
  Pseudomarginals tau = zeros_like_tau(model);
  switch (model.kind) {
    case ModelKind::BipartiteMatching: {
      const double v = 1.0 / model.n;
      std::fill(tau.edge.begin(), tau.edge.end(), v);
      return tau;
    }
    case ModelKind::GeneralPerfectMatching: {
      const GeneralGraph& g = model.graph;
      const ClampInfo& cl = *model.clamps;
      const std::vector<double> w(g.num_edges(), 0.0);
      std::set<std::vector<int>> found;
      for (int e = 0; e < g.num_edges(); ++e) {
        if (!cl.is_free(e)) continue;
        auto with_e = matching_dp::max_weight_perfect_matching(g, w, {e}, {});
        auto without_e = matching_dp::max_weight_perfect_matching(g, w, {}, {e});
        if (!with_e.feasible || !without_e.feasible)
          throw InvariantError("free edge lost feasibility after clamp analysis");
        found.insert(with_e.mate);
        found.insert(without_e.mate);
      }
      if (found.empty()) {
        // fully clamped graph: the unique perfect matching
        auto only = matching_dp::max_weight_perfect_matching(g, w);
        if (!only.feasible) throw InfeasibleError("graph admits no perfect matching");
        found.insert(only.mate);
      }
      const double share = 1.0 / static_cast<double>(found.size());
      for (const auto& mate : found)
        for (int v = 0; v < g.num_vertices; ++v)
          if (mate[v] > v) tau.edge[g.edge_index(v, mate[v])] += share;
      return tau;
    }
    case ModelKind::PairwiseBinaryGrid: {
      std::fill(tau.node.begin(), tau.node.end(), 0.5);
      std::fill(tau.edge.begin(), tau.edge.end(), 0.25);
      return tau;
    }
  }
  throw StructuralError("unknown model kind");
}

// ---------------------------------------------------------------------------
// Scores and feature maps
// ---------------------------------------------------------------------------

inline void check_theta(const StructuredModel& model, const std::vector<double>& theta) {
  if (static_cast<int>(theta.size()) != model.num_parameters())
    throw StructuralError("parameter vector length does not match model");
}

/// W_ij = sum_k theta_k F^k_ij. Matching models only; for general graphs the
/// matrix is symmetric with zeros on non-edges.
inline Matrix edge_weight_matrix(const StructuredModel& model, const std::vector<double>& theta) {
  if (!model.is_matching()) throw StructuralError("edge_weight_matrix requires a matching model");
  check_theta(model, theta);
  const auto& maps = model.features->matching;
  if (model.kind == ModelKind::BipartiteMatching) {
    Matrix w(model.n, model.n);
    for (int k = 0; k < model.K; ++k) {
      const auto& f = maps[k].data();
      for (size_t i = 0; i < w.size(); ++i) w.data()[i] += theta[k] * f[i];
    }
    return w;
  }
  const int nv = model.graph.num_vertices;
  Matrix w(nv, nv);
  for (const auto& [a, b] : model.graph.edges) {
    double s = 0.0;
    for (int k = 0; k < model.K; ++k) s += theta[k] * maps[k](a, b);
    w(a, b) = w(b, a) = s;
  }
  return w;
}

/// Per-edge-slot linear scores <theta, f_e> for matchings.
inline std::vector<double> matching_edge_scores(const StructuredModel& model,
                                                const std::vector<double>& theta) {
  check_theta(model, theta);
  const auto& maps = model.features->matching;
  std::vector<double> s(model.num_edge_slots(), 0.0);
  if (model.kind == ModelKind::BipartiteMatching) {
    for (int k = 0; k < model.K; ++k) {
      const auto& f = maps[k].data();
      for (size_t i = 0; i < s.size(); ++i) s[i] += theta[k] * f[i];
    }
  } else {
    for (int e = 0; e < model.graph.num_edges(); ++e) {
      const auto [a, b] = model.graph.edges[e];
      for (int k = 0; k < model.K; ++k) s[e] += theta[k] * maps[k](a, b);
    }
  }
  return s;
}

struct GridScores {
  std::vector<double> node;  // num_nodes*2
  std::vector<double> edge;  // num_edges*4
};

/// theta layout for grids: F (2 x C) row-major, then G (4 x D) row-major.
inline GridScores grid_scores(const StructuredModel& model, const std::vector<double>& theta) {
  check_theta(model, theta);
  const int C = model.C, D = model.D;
  const Matrix& u = model.features->grid_node;
  const Matrix& v = model.features->grid_edge;
  GridScores s;
  s.node.assign(static_cast<size_t>(model.grid.num_nodes()) * 2, 0.0);
  s.edge.assign(static_cast<size_t>(model.grid.num_edges()) * 4, 0.0);
  for (int nidx = 0; nidx < model.grid.num_nodes(); ++nidx)
    for (int l = 0; l < 2; ++l) {
      double acc = 0.0;
      for (int c = 0; c < C; ++c) acc += theta[l * C + c] * u(nidx, c);
      s.node[2 * nidx + l] = acc;
    }
  const int goff = 2 * C;
  for (int e = 0; e < model.grid.num_edges(); ++e)
    for (int st = 0; st < 4; ++st) {
      double acc = 0.0;
      for (int d = 0; d < D; ++d) acc += theta[goff + st * D + d] * v(e, d);
      s.edge[4 * e + st] = acc;
    }
  return s;
}

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------

/// Observation encodings, one int vector each:
///   bipartite: perm[i] = matched column of row i
///   general:   mate[v] = matched partner of v
///   grid:      labels[v] in {0, 1}
inline void check_observation(const StructuredModel& model, const std::vector<int>& y) {
  switch (model.kind) {
    case ModelKind::BipartiteMatching: {
      if (static_cast<int>(y.size()) != model.n)
        throw StructuralError("observation length != n");
      std::vector<uint8_t> seen(model.n, 0);
      for (int j : y) {
        if (j < 0 || j >= model.n || seen[j]) throw StructuralError("observation is not a permutation");
        seen[j] = 1;
      }
      return;
    }
    case ModelKind::GeneralPerfectMatching: {
      const auto& g = model.graph;
      if (static_cast<int>(y.size()) != g.num_vertices)
        throw StructuralError("observation length != |V|");
      for (int v = 0; v < g.num_vertices; ++v) {
        const int u = y[v];
        if (u < 0 || u >= g.num_vertices || u == v || y[u] != v)
          throw StructuralError("observation is not a perfect matching");
        if (g.edge_index(v, u) < 0)
          throw StructuralError("observation uses a non-edge");
      }
      return;
    }
    case ModelKind::PairwiseBinaryGrid: {
      if (static_cast<int>(y.size()) != model.grid.num_nodes())
        throw StructuralError("observation length != number of grid nodes");
      for (int l : y)
        if (l != 0 && l != 1) throw StructuralError("grid labels must be binary");
      return;
    }
  }
}

/// Integral pseudomarginals of an observed structure.
inline Pseudomarginals embed_observation(const StructuredModel& model, const std::vector<int>& y) {
  check_observation(model, y);
  Pseudomarginals tau = zeros_like_tau(model);
  switch (model.kind) {
    case ModelKind::BipartiteMatching:
      for (int i = 0; i < model.n; ++i) tau.edge[i * model.n + y[i]] = 1.0;
      break;
    case ModelKind::GeneralPerfectMatching:
      for (int v = 0; v < model.graph.num_vertices; ++v)
        if (y[v] > v) tau.edge[model.graph.edge_index(v, y[v])] = 1.0;
      break;
    case ModelKind::PairwiseBinaryGrid: {
      for (int v = 0; v < model.grid.num_nodes(); ++v) tau.node[2 * v + y[v]] = 1.0;
      for (int e = 0; e < model.grid.num_edges(); ++e) {
        const auto [a, b] = model.grid.edges[e];
        tau.edge[4 * e + y[a] * 2 + y[b]] = 1.0;
      }
      break;
    }
  }
  return tau;
}

/// Feature expectation under tau: length K for matchings, 2C + 4D for grids
/// (the gradient of the score in theta).
inline std::vector<double> feature_expectation(const StructuredModel& model,
                                               const Pseudomarginals& tau) {
  check_tau_shape(tau, model);
  std::vector<double> out(model.num_parameters(), 0.0);
  if (model.is_matching()) {
    const auto& maps = model.features->matching;
    if (model.kind == ModelKind::BipartiteMatching) {
      for (int k = 0; k < model.K; ++k) out[k] = dot(maps[k].data(), tau.edge);
    } else {
      for (int e = 0; e < model.graph.num_edges(); ++e) {
        const auto [a, b] = model.graph.edges[e];
        for (int k = 0; k < model.K; ++k) out[k] += tau.edge[e] * maps[k](a, b);
      }
    }
    return out;
  }
  const Matrix& u = model.features->grid_node;
  const Matrix& v = model.features->grid_edge;
  const int C = model.C, D = model.D;
  for (int nidx = 0; nidx < model.grid.num_nodes(); ++nidx)
    for (int l = 0; l < 2; ++l) {
      const double t = tau.node[2 * nidx + l];
      if (t == 0.0) continue;
      for (int c = 0; c < C; ++c) out[l * C + c] += t * u(nidx, c);
    }
  const int goff = 2 * C;
  for (int e = 0; e < model.grid.num_edges(); ++e)
    for (int st = 0; st < 4; ++st) {
      const double t = tau.edge[4 * e + st];
      if (t == 0.0) continue;
      for (int d = 0; d < D; ++d) out[goff + st * D + d] += t * v(e, d);
    }
  return out;
}

inline std::vector<double> observation_features(const StructuredModel& model,
                                                const std::vector<int>& y) {
  return feature_expectation(model, embed_observation(model, y));
}

/// <phi(X, y), theta>
inline double structure_score(const StructuredModel& model, const std::vector<double>& theta,
                              const std::vector<int>& y) {
  return dot(observation_features(model, y), theta);
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct Dataset {
  StructuredModel base;  // topology and feature dimensions; base.features unused
  std::vector<std::shared_ptr<const Features>> features;  // per sample
  std::vector<std::vector<int>> observations;

  int size() const { return static_cast<int>(observations.size()); }

  StructuredModel model(int m) const {
    StructuredModel mm = base;
    mm.features = features[m];
    return mm;
  }
};

inline void check_dataset(const Dataset& data) {
  if (data.features.size() != data.observations.size())
    throw StructuralError("dataset feature/observation count mismatch");
  for (int m = 0; m < data.size(); ++m) {
    const StructuredModel mm = data.model(m);
    if (mm.is_matching()) {
      const int side = mm.kind == ModelKind::BipartiteMatching ? mm.n : mm.graph.num_vertices;
      if (static_cast<int>(mm.features->matching.size()) != mm.K)
        throw StructuralError("sample feature count != K");
      check_matching_features(mm.features->matching, side, side);
    }
    check_observation(mm, data.observations[m]);
  }
}

/// Fraction of nodes whose assignment differs between two structures.
inline double hamming_loss(const StructuredModel& model, const std::vector<int>& a,
                           const std::vector<int>& b) {
  check_observation(model, a);
  check_observation(model, b);
  int mismatched = 0;
  for (size_t i = 0; i < a.size(); ++i) mismatched += a[i] != b[i];
  return static_cast<double>(mismatched) / static_cast<double>(a.size());
}

}  // namespace mlestruct
