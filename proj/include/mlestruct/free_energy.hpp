#pragma once

#include <cmath>
#include <vector>

#include "mlestruct/common.hpp"
#include "mlestruct/model.hpp"

namespace mlestruct {

/// Slack handling for matching entropies. Perfect-matching models satisfy
/// the degree constraints with equality, so their node slacks are structural
/// zeros and the slack terms are compiled away (Structural). On the relaxed
/// polytope with degree <= 1 the slack terms are evaluated (Explicit).
enum class SlackMode { Structural, Explicit };

namespace detail {

inline void check_tau_domain(const Pseudomarginals& tau) {
  constexpr double kTol = 1e-12;
  for (double v : tau.node)
    if (v < -kTol || v > 1.0 + kTol) throw DomainError("pseudomarginal entry outside [0,1]");
  for (double v : tau.edge)
    if (v < -kTol || v > 1.0 + kTol) throw DomainError("pseudomarginal entry outside [0,1]");
}

/// rho_i + rho_j for matching edge slot e.
inline double edge_rho_sum(const StructuredModel& m, const Reweighting& rho, int e) {
  if (m.kind == ModelKind::BipartiteMatching)
    return rho.values[e / m.n] + rho.values[m.n + e % m.n];
  const auto [a, b] = m.graph.edges[e];
  return rho.values[a] + rho.values[b];
}

inline std::vector<double> matching_node_slacks(const StructuredModel& m,
                                                const Pseudomarginals& tau) {
  std::vector<double> s(m.num_match_nodes(), 1.0);
  if (m.kind == ModelKind::BipartiteMatching) {
    const int n = m.n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        s[i] -= tau.edge[i * n + j];
        s[n + j] -= tau.edge[i * n + j];
      }
  } else {
    for (int v = 0; v < m.graph.num_vertices; ++v)
      for (int e : m.graph.incident[v]) s[v] -= tau.edge[e];
  }
  return s;
}

/// R_n = sum of rho over edges incident to each grid node.
inline std::vector<double> grid_node_rho_sums(const StructuredModel& m, const Reweighting& rho) {
  std::vector<double> r(m.grid.num_nodes(), 0.0);
  for (int e = 0; e < m.grid.num_edges(); ++e) {
    r[m.grid.edges[e].first] += rho.values[e];
    r[m.grid.edges[e].second] += rho.values[e];
  }
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Energy
// ---------------------------------------------------------------------------

/// E(tau; theta) = -<expected features, theta>, the negated expected score.
inline double energy(const Pseudomarginals& tau, const StructuredModel& model,
                     const std::vector<double>& theta) {
  check_tau_shape(tau, model);
  if (model.is_matching()) return -dot(matching_edge_scores(model, theta), tau.edge);
  const GridScores s = grid_scores(model, theta);
  return -dot(s.node, tau.node) - dot(s.edge, tau.edge);
}

// ---------------------------------------------------------------------------
// Reweighted entropies
// ---------------------------------------------------------------------------

/// Grid entropy in the regrouped form
///   H_rho = sum_n (1 - R_n) H(tau_n) + sum_e rho_e H(tau_e),
/// the canonical form used throughout the optimization path.
inline double entropy_rw_grid(const Pseudomarginals& tau, const StructuredModel& model,
                              const Reweighting& rho) {
  check_tau_shape(tau, model);
  check_rho(rho, model);
  detail::check_tau_domain(tau);
  const auto rn = detail::grid_node_rho_sums(model, rho);
  double h = 0.0;
  for (int v = 0; v < model.grid.num_nodes(); ++v) {
    const double hn = -xlogx(tau.node[2 * v]) - xlogx(tau.node[2 * v + 1]);
    h += (1.0 - rn[v]) * hn;
  }
  for (int e = 0; e < model.grid.num_edges(); ++e) {
    double he = 0.0;
    for (int st = 0; st < 4; ++st) he -= xlogx(tau.edge[4 * e + st]);
    h += rho.values[e] * he;
  }
  return h;
}

/// Grid entropy in the definition form: node entropies minus rho-weighted
/// mutual informations. Equals entropy_rw_grid on the local polytope.
inline double entropy_rw_grid_mi(const Pseudomarginals& tau, const StructuredModel& model,
                                 const Reweighting& rho) {
  check_tau_shape(tau, model);
  check_rho(rho, model);
  detail::check_tau_domain(tau);
  double h = 0.0;
  for (int v = 0; v < model.grid.num_nodes(); ++v)
    h += -xlogx(tau.node[2 * v]) - xlogx(tau.node[2 * v + 1]);
  for (int e = 0; e < model.grid.num_edges(); ++e) {
    const auto [a, b] = model.grid.edges[e];
    double mi = 0.0;
    for (int la = 0; la < 2; ++la)
      for (int lb = 0; lb < 2; ++lb) {
        const double te = tau.edge[4 * e + la * 2 + lb];
        if (te <= 0.0) continue;
        const double prod = tau.node[2 * a + la] * tau.node[2 * b + lb];
        if (prod <= 0.0) throw DomainError("zero node marginal under positive edge marginal");
        mi += te * std::log(te / prod);
      }
    h -= rho.values[e] * mi;
  }
  return h;
}

/// Matching entropy
///   H'_rho = sum_(ij) [(rho_i + rho_j - 1)(1 - tau_ij) log(1 - tau_ij)
///                      - tau_ij log tau_ij]
///            - sum_i rho_i s_i log s_i,   s_i = 1 - sum_j tau_ij,
/// with 0 log 0 := 0. Clamped edges are excluded from the sums; slack terms
/// appear only in Explicit mode.
inline double entropy_rw_matching(const Pseudomarginals& tau, const StructuredModel& model,
                                  const Reweighting& rho,
                                  SlackMode mode = SlackMode::Structural) {
  check_tau_shape(tau, model);
  check_rho(rho, model);
  detail::check_tau_domain(tau);
  double h = 0.0;
  for (int e = 0; e < model.num_edge_slots(); ++e) {
    if (model.clamps && !model.clamps->is_free(e)) continue;
    const double t = tau.edge[e];
    h += (detail::edge_rho_sum(model, rho, e) - 1.0) * xlogx(1.0 - t) - xlogx(t);
  }
  if (mode == SlackMode::Explicit) {
    const auto slack = detail::matching_node_slacks(model, tau);
    for (int v = 0; v < model.num_match_nodes(); ++v) {
      if (slack[v] < -1e-9) throw DomainError("node degree exceeds 1 on the matching polytope");
      h -= rho.values[v] * xlogx(slack[v]);
    }
  }
  return h;
}

inline double entropy_rw(const Pseudomarginals& tau, const StructuredModel& model,
                         const Reweighting& rho, SlackMode mode = SlackMode::Structural) {
  return model.is_matching() ? entropy_rw_matching(tau, model, rho, mode)
                             : entropy_rw_grid(tau, model, rho);
}

// ---------------------------------------------------------------------------
// Free energy
// ---------------------------------------------------------------------------

struct FreeEnergyValue {
  double energy = 0.0;
  double entropy = 0.0;
  double total = 0.0;  // energy - entropy
};

inline FreeEnergyValue free_energy(const Pseudomarginals& tau, const StructuredModel& model,
                                   const std::vector<double>& theta, const Reweighting& rho,
                                   SlackMode mode = SlackMode::Structural) {
  FreeEnergyValue f;
  f.energy = energy(tau, model, theta);
  f.entropy = entropy_rw(tau, model, rho, mode);
  f.total = f.energy - f.entropy;
  return f;
}

// ---------------------------------------------------------------------------
// Entropy gradients
// ---------------------------------------------------------------------------

/// Analytic gradient of H_rho / H'_rho with respect to the tau coordinates.
/// Requires strict interiority on unclamped coordinates; clamped coordinates
/// get zero entries.
inline Pseudomarginals grad_entropy(const Pseudomarginals& tau, const StructuredModel& model,
                                    const Reweighting& rho,
                                    SlackMode mode = SlackMode::Structural) {
  check_tau_shape(tau, model);
  check_rho(rho, model);
  Pseudomarginals g = zeros_like_tau(model);
  if (model.kind == ModelKind::PairwiseBinaryGrid) {
    const auto rn = detail::grid_node_rho_sums(model, rho);
    for (int v = 0; v < model.grid.num_nodes(); ++v)
      for (int l = 0; l < 2; ++l) {
        const double t = tau.node[2 * v + l];
        if (t <= 0.0) throw GradientUndefinedError("node marginal at boundary");
        g.node[2 * v + l] = -(1.0 - rn[v]) * (1.0 + std::log(t));
      }
    for (int e = 0; e < model.grid.num_edges(); ++e)
      for (int st = 0; st < 4; ++st) {
        const double t = tau.edge[4 * e + st];
        if (t <= 0.0) throw GradientUndefinedError("edge marginal at boundary");
        g.edge[4 * e + st] = -rho.values[e] * (1.0 + std::log(t));
      }
    return g;
  }

  std::vector<double> slack_term;
  if (mode == SlackMode::Explicit) {
    const auto slack = detail::matching_node_slacks(model, tau);
    slack_term.resize(slack.size());
    for (size_t v = 0; v < slack.size(); ++v) {
      if (slack[v] <= 0.0) throw GradientUndefinedError("zero slack in Explicit mode");
      slack_term[v] = rho.values[v] * (1.0 + std::log(slack[v]));
    }
  }
  for (int e = 0; e < model.num_edge_slots(); ++e) {
    if (model.clamps && !model.clamps->is_free(e)) continue;
    const double t = tau.edge[e];
    if (t <= 0.0 || t >= 1.0)
      throw GradientUndefinedError("matching pseudomarginal at boundary");
    double ge = -(detail::edge_rho_sum(model, rho, e) - 1.0) * (1.0 + std::log(1.0 - t)) -
                (1.0 + std::log(t));
    if (mode == SlackMode::Explicit) {
      if (model.kind == ModelKind::BipartiteMatching) {
        ge += slack_term[e / model.n] + slack_term[model.n + e % model.n];
      } else {
        const auto [a, b] = model.graph.edges[e];
        ge += slack_term[a] + slack_term[b];
      }
    }
    g.edge[e] = ge;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Entropy along a segment (line-search support)
// ---------------------------------------------------------------------------

/// H((1-eta) tau + eta s) without materializing the interpolated point.
inline double entropy_along(const Pseudomarginals& tau, const Pseudomarginals& s, double eta,
                            const StructuredModel& model, const Reweighting& rho,
                            SlackMode mode = SlackMode::Structural) {
  if (model.kind == ModelKind::PairwiseBinaryGrid) {
    const auto rn = detail::grid_node_rho_sums(model, rho);
    double h = 0.0;
    for (int v = 0; v < model.grid.num_nodes(); ++v) {
      double hn = 0.0;
      for (int l = 0; l < 2; ++l)
        hn -= xlogx(tau.node[2 * v + l] + eta * (s.node[2 * v + l] - tau.node[2 * v + l]));
      h += (1.0 - rn[v]) * hn;
    }
    for (int e = 0; e < model.grid.num_edges(); ++e) {
      double he = 0.0;
      for (int st = 0; st < 4; ++st)
        he -= xlogx(tau.edge[4 * e + st] + eta * (s.edge[4 * e + st] - tau.edge[4 * e + st]));
      h += rho.values[e] * he;
    }
    return h;
  }
  double h = 0.0;
  for (int e = 0; e < model.num_edge_slots(); ++e) {
    if (model.clamps && !model.clamps->is_free(e)) continue;
    const double t = tau.edge[e] + eta * (s.edge[e] - tau.edge[e]);
    h += (detail::edge_rho_sum(model, rho, e) - 1.0) * xlogx(1.0 - t) - xlogx(t);
  }
  if (mode == SlackMode::Explicit) {
    const auto sl_t = detail::matching_node_slacks(model, tau);
    const auto sl_s = detail::matching_node_slacks(model, s);
    for (int v = 0; v < model.num_match_nodes(); ++v)
      h -= rho.values[v] * xlogx(sl_t[v] + eta * (sl_s[v] - sl_t[v]));
  }
  return h;
}

/// d/d eta of entropy_along at eta in [0, 1). Coordinates the segment does
/// not move contribute nothing and are skipped.
inline double entropy_derivative_along(const Pseudomarginals& tau, const Pseudomarginals& s,
                                       double eta, const StructuredModel& model,
                                       const Reweighting& rho,
                                       SlackMode mode = SlackMode::Structural) {
  auto dxlogx = [](double x, double dx) {
    if (dx == 0.0) return 0.0;
    if (x <= 0.0) throw GradientUndefinedError("entropy derivative at boundary");
    return dx * (1.0 + std::log(x));
  };
  if (model.kind == ModelKind::PairwiseBinaryGrid) {
    const auto rn = detail::grid_node_rho_sums(model, rho);
    double dh = 0.0;
    for (int v = 0; v < model.grid.num_nodes(); ++v)
      for (int l = 0; l < 2; ++l) {
        const double d = s.node[2 * v + l] - tau.node[2 * v + l];
        if (d == 0.0) continue;
        dh -= (1.0 - rn[v]) * dxlogx(tau.node[2 * v + l] + eta * d, d);
      }
    for (int e = 0; e < model.grid.num_edges(); ++e)
      for (int st = 0; st < 4; ++st) {
        const double d = s.edge[4 * e + st] - tau.edge[4 * e + st];
        if (d == 0.0) continue;
        dh -= rho.values[e] * dxlogx(tau.edge[4 * e + st] + eta * d, d);
      }
    return dh;
  }
  double dh = 0.0;
  for (int e = 0; e < model.num_edge_slots(); ++e) {
    if (model.clamps && !model.clamps->is_free(e)) continue;
    const double d = s.edge[e] - tau.edge[e];
    if (d == 0.0) continue;
    const double t = tau.edge[e] + eta * d;
    dh += -(detail::edge_rho_sum(model, rho, e) - 1.0) * dxlogx(1.0 - t, 1.0) * d -
          dxlogx(t, 1.0) * d;
  }
  if (mode == SlackMode::Explicit) {
    const auto sl_t = detail::matching_node_slacks(model, tau);
    const auto sl_s = detail::matching_node_slacks(model, s);
    for (int v = 0; v < model.num_match_nodes(); ++v) {
      const double d = sl_s[v] - sl_t[v];
      if (d == 0.0) continue;
      dh -= rho.values[v] * dxlogx(sl_t[v] + eta * d, d);
    }
  }
  return dh;
}

}  // namespace mlestruct
