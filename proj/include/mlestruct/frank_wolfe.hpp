#pragma once

#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

#include "mlestruct/common.hpp"
#include "mlestruct/dual.hpp"
#include "mlestruct/free_energy.hpp"
#include "mlestruct/map_solvers.hpp"
#include "mlestruct/model.hpp"

namespace mlestruct {

enum class FWMode { Batch, Block };
enum class StepRule { Decay, LineSearch };

struct FWConfig {
  FWMode mode = FWMode::Batch;
  StepRule step_rule = StepRule::LineSearch;
  long max_iters = 10000;
  double gap_tol = 1e-6;
  double subproblem_tol = 0.0;  // delta of an inexact oracle; 0 for the exact solvers
  bool averaging = false;
  uint64_t rng_seed = 0;
  int threads = 1;
  int refresh_every = 1000;
  double boundary_eps = 1e-12;
  long validate_every = 100;  // feasibility audit cadence, in recorded epochs
};

inline void check_config(const FWConfig& cfg) {
  if (!(cfg.gap_tol > 0.0)) throw DomainError("gap_tol must be positive");
  if (cfg.max_iters < 1) throw DomainError("max_iters must be at least 1");
  if (cfg.boundary_eps <= 0.0 || cfg.boundary_eps >= 0.5)
    throw DomainError("boundary_eps out of range");
}

struct TraceRow {
  long t = 0;
  double objective = 0.0;
  double gap = 0.0;
  double gamma = 0.0;
  double seconds = 0.0;
};

/// Schedule values; the applied step is additionally capped at
/// 1 - boundary_eps so iterates stay strictly interior.
inline double decay_step_batch(long t) { return 2.0 / (2.0 + static_cast<double>(t)); }
inline double decay_step_block(long t, int num_samples) {
  const double m2 = 2.0 * num_samples;
  return m2 / (m2 + static_cast<double>(t));
}

/// FW certificate <tau - s, grad>; an upper bound on the suboptimality when
/// s comes from an exact linear minimizer.
inline double duality_gap(const Pseudomarginals& tau, const Pseudomarginals& s,
                          const Pseudomarginals& grad) {
  double g = 0.0;
  for (size_t i = 0; i < grad.node.size(); ++i) g += (tau.node[i] - s.node[i]) * grad.node[i];
  for (size_t i = 0; i < grad.edge.size(); ++i) g += (tau.edge[i] - s.edge[i]) * grad.edge[i];
  return g;
}

// ---------------------------------------------------------------------------
// Segment objective h(eta) along tau -> s directions
// ---------------------------------------------------------------------------

/// h(eta) = q0 + q1 eta + q2 eta^2 - sum_k H_k(eta): the objective restricted
/// to the segment, with the quadratic/linear part reduced to precomputed
/// scalars so a trial eta costs one entropy evaluation.
struct SegmentObjective {
  double q0 = 0.0, q1 = 0.0, q2 = 0.0;
  struct Piece {
    const StructuredModel* model;
    const Pseudomarginals* tau;
    const Pseudomarginals* vertex;
  };
  std::vector<Piece> pieces;
  const Reweighting* rho = nullptr;
  SlackMode mode = SlackMode::Structural;

  double value(double eta) const {
    double v = q0 + eta * (q1 + eta * q2);
    for (const Piece& p : pieces) v -= entropy_along(*p.tau, *p.vertex, eta, *p.model, *rho, mode);
    if (!std::isfinite(v)) throw GradientUndefinedError("non-finite segment objective");
    return v;
  }

  double derivative(double eta) const {
    double v = q1 + 2.0 * q2 * eta;
    for (const Piece& p : pieces)
      v -= entropy_derivative_along(*p.tau, *p.vertex, eta, *p.model, *rho, mode);
    if (!std::isfinite(v)) throw GradientUndefinedError("non-finite segment derivative");
    return v;
  }
};

/// Direction features phi(s) - phi(tau), the residual decrement per unit step.
inline std::vector<double> direction_features(const StructuredModel& model,
                                              const Pseudomarginals& tau,
                                              const Pseudomarginals& vertex) {
  std::vector<double> q = feature_expectation(model, vertex);
  axpy(q, -1.0, feature_expectation(model, tau));
  return q;
}

/// Learning segment over all samples: the quadratic part is
/// ||r - eta q||^2 / (2 lambda) with q = sum_m phi_m(s_m) - phi_m(tau_m).
inline SegmentObjective make_learning_segment(const std::vector<StructuredModel>& models,
                                              const std::vector<Pseudomarginals>& taus,
                                              const std::vector<Pseudomarginals>& vertices,
                                              const std::vector<double>& residual,
                                              const std::vector<double>& q_total, double lambda,
                                              const Reweighting& rho,
                                              SlackMode mode = SlackMode::Structural) {
  SegmentObjective h;
  h.q0 = squared_norm(residual) / (2.0 * lambda);
  h.q1 = -dot(residual, q_total) / lambda;
  h.q2 = squared_norm(q_total) / (2.0 * lambda);
  h.rho = &rho;
  h.mode = mode;
  h.pieces.reserve(models.size());
  for (size_t m = 0; m < models.size(); ++m)
    h.pieces.push_back({&models[m], &taus[m], &vertices[m]});
  return h;
}

/// Free-energy segment for inference: linear energy plus entropy.
inline SegmentObjective make_inference_segment(const StructuredModel& model,
                                               const Pseudomarginals& tau,
                                               const Pseudomarginals& vertex,
                                               const Pseudomarginals& neg_scores,
                                               const Reweighting& rho,
                                               SlackMode mode = SlackMode::Structural) {
  SegmentObjective h;
  h.q0 = tau_dot(neg_scores, tau);
  h.q1 = tau_dot(neg_scores, vertex) - h.q0;
  h.q2 = 0.0;
  h.rho = &rho;
  h.mode = mode;
  h.pieces.push_back({&model, &tau, &vertex});
  return h;
}

/// Minimizer of a convex h on [0, eta_max] by bisection on the derivative,
/// to |h'| < dtol or interval < xtol.
inline double line_search_minimize(const SegmentObjective& h, double eta_max,
                                   double dtol = 1e-10, double xtol = 1e-12) {
  if (h.derivative(0.0) >= 0.0) return 0.0;
  if (h.derivative(eta_max) <= 0.0) return eta_max;
  double lo = 0.0, hi = eta_max;
  while (hi - lo > xtol) {
    const double mid = 0.5 * (lo + hi);
    const double d = h.derivative(mid);
    if (std::abs(d) < dtol) return mid;
    if (d < 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

/// Step size for the full-batch learning segment (the spec-level entry
/// point; the solver loops inline the same computation).
inline double line_search(const Dataset& data, const std::vector<Pseudomarginals>& taus,
                          const std::vector<Pseudomarginals>& vertices, const GramCache& cache,
                          const Reweighting& rho, double lambda, double boundary_eps = 1e-12) {
  std::vector<StructuredModel> models;
  models.reserve(data.size());
  for (int m = 0; m < data.size(); ++m) models.push_back(data.model(m));
  std::vector<double> q(data.base.num_parameters(), 0.0);
  for (int m = 0; m < data.size(); ++m)
    axpy(q, 1.0, direction_features(models[m], taus[m], vertices[m]));
  const SegmentObjective h =
      make_learning_segment(models, taus, vertices, cache.residual, q, lambda, rho);
  return line_search_minimize(h, 1.0 - boundary_eps);
}

// ---------------------------------------------------------------------------
// Parallel sample sweep
// ---------------------------------------------------------------------------

namespace detail {

inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w]() {
      for (int i = w; i < n; i += workers) fn(i);
    });
  for (auto& th : pool) th.join();
}

struct SampleWork {
  Pseudomarginals grad;
  VertexSolution sol;
  std::vector<double> qdir;  // phi(s) - phi(tau)
  double gap = 0.0;
  std::exception_ptr error;
};

[[noreturn]] inline void rethrow_with_sample(int m, const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const InfeasibleError& e) {
    throw InfeasibleError("sample " + std::to_string(m) + ": " + e.what());
  } catch (const SizeCapError& e) {
    throw SizeCapError("sample " + std::to_string(m) + ": " + e.what());
  } catch (const GradientUndefinedError& e) {
    throw GradientUndefinedError("sample " + std::to_string(m) + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error("sample " + std::to_string(m) + ": " + e.what());
  }
}

/// Gradient + linear subproblem + certificate for every sample.
inline void sample_sweep(const std::vector<StructuredModel>& models,
                         const std::vector<Pseudomarginals>& taus,
                         const std::vector<double>& theta, const Reweighting& rho,
                         const MapOracle& oracle, int threads, std::vector<SampleWork>& work) {
  const int m_count = static_cast<int>(models.size());
  parallel_for(m_count, threads, [&](int m) {
    try {
      work[m].grad = grad_dual_sample(models[m], taus[m], theta, rho);
      work[m].sol = oracle(models[m], work[m].grad);
      work[m].gap = duality_gap(taus[m], work[m].sol.vertex, work[m].grad);
      work[m].qdir = direction_features(models[m], taus[m], work[m].sol.vertex);
      work[m].error = nullptr;
    } catch (...) {
      work[m].error = std::current_exception();
    }
  });
  for (int m = 0; m < m_count; ++m)
    if (work[m].error) rethrow_with_sample(m, work[m].error);
}

inline double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

inline void audit_feasibility(const std::vector<StructuredModel>& models,
                              const std::vector<Pseudomarginals>& taus) {
  for (size_t m = 0; m < models.size(); ++m)
    if (!validate_local_polytope(taus[m], models[m], 1e-9))
      throw InvariantError("iterate left the local polytope (sample " + std::to_string(m) + ")");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Learning loops
// ---------------------------------------------------------------------------

struct LearnResult {
  std::vector<double> theta;
  std::vector<double> theta_avg;  // weighted iterate average; empty unless requested
  std::vector<Pseudomarginals> taus;
  std::vector<TraceRow> trace;
  std::vector<double> sample_gaps;
  double total_gap = std::numeric_limits<double>::infinity();
  long iterations = 0;
  bool converged = false;
};

/// Optional per-epoch monitor: (t, theta, theta_avg). theta_avg aliases theta
/// when averaging is off.
using EpochCallback =
    std::function<void(long, const std::vector<double>&, const std::vector<double>&)>;

inline LearnResult fw_learn(const Dataset& data, const Reweighting& rho, double lambda,
                            const FWConfig& cfg, const MapOracle& oracle = default_map_oracle(),
                            const EpochCallback& on_epoch = {}) {
  check_config(cfg);
  detail::check_lambda(lambda);
  if (data.size() == 0) throw StructuralError("empty dataset");
  check_rho(rho, data.base);

  const int m_count = data.size();
  std::vector<StructuredModel> models;
  models.reserve(m_count);
  for (int m = 0; m < m_count; ++m) models.push_back(data.model(m));

  LearnResult out;
  out.taus.reserve(m_count);
  for (int m = 0; m < m_count; ++m) out.taus.push_back(init_pseudomarginals(models[m]));

  GramCache cache = build_gram_cache(data, out.taus, cfg.refresh_every);
  std::vector<double> rbar = cache.residual;
  std::vector<detail::SampleWork> work(m_count);
  const auto start = std::chrono::steady_clock::now();
  const double eta_max = 1.0 - cfg.boundary_eps;
  long epochs_recorded = 0;

  for (long t = 0; t < cfg.max_iters; ++t) {
    const std::vector<double> theta = theta_from_cache(cache, lambda);
    detail::sample_sweep(models, out.taus, theta, rho, oracle, cfg.threads, work);
    double total_gap = 0.0;
    for (const auto& w : work) total_gap += w.gap;
    const double objective =
        dual_objective_from_residual(cache.residual, data, out.taus, lambda, rho);

    if (epochs_recorded % cfg.validate_every == 0) detail::audit_feasibility(models, out.taus);
    ++epochs_recorded;

    TraceRow row{t, objective, total_gap, 0.0, detail::elapsed_seconds(start)};
    out.total_gap = total_gap;
    out.sample_gaps.resize(m_count);
    for (int m = 0; m < m_count; ++m) out.sample_gaps[m] = work[m].gap;
    out.iterations = t;
    if (total_gap <= cfg.gap_tol) {
      out.trace.push_back(row);
      out.converged = true;
      break;
    }

    std::vector<double> q_total(data.base.num_parameters(), 0.0);
    std::vector<Pseudomarginals> vertices;
    vertices.reserve(m_count);
    for (int m = 0; m < m_count; ++m) {
      axpy(q_total, 1.0, work[m].qdir);
      vertices.push_back(std::move(work[m].sol.vertex));
    }
    double gamma;
    if (cfg.step_rule == StepRule::Decay) {
      gamma = std::min(decay_step_batch(t), eta_max);
    } else {
      const SegmentObjective h = make_learning_segment(models, out.taus, vertices,
                                                       cache.residual, q_total, lambda, rho);
      gamma = line_search_minimize(h, eta_max);
    }
    row.gamma = gamma;
    out.trace.push_back(row);

    for (int m = 0; m < m_count; ++m) tau_mix(out.taus[m], gamma, vertices[m]);
    axpy(cache.residual, -gamma, q_total);
    ++cache.updates_since_refresh;
    maybe_refresh_cache(cache, data, out.taus);
    if (cfg.averaging) {
      const double w = 2.0 / (static_cast<double>(t) + 2.0);
      for (size_t i = 0; i < rbar.size(); ++i)
        rbar[i] = (1.0 - w) * rbar[i] + w * cache.residual[i];
    }
    if (on_epoch) {
      const std::vector<double> th = theta_from_cache(cache, lambda);
      if (cfg.averaging) {
        std::vector<double> th_avg = rbar;
        for (double& v : th_avg) v /= lambda;
        on_epoch(t, th, th_avg);
      } else {
        on_epoch(t, th, th);
      }
    }
  }

  out.theta = theta_from_cache(cache, lambda);
  if (cfg.averaging) {
    out.theta_avg = rbar;
    for (double& v : out.theta_avg) v /= lambda;
  }
  return out;
}

inline LearnResult bcfw_learn(const Dataset& data, const Reweighting& rho, double lambda,
                              const FWConfig& cfg, const MapOracle& oracle = default_map_oracle(),
                              const EpochCallback& on_epoch = {}) {
  check_config(cfg);
  detail::check_lambda(lambda);
  if (data.size() == 0) throw StructuralError("empty dataset");
  check_rho(rho, data.base);

  const int m_count = data.size();
  std::vector<StructuredModel> models;
  models.reserve(m_count);
  for (int m = 0; m < m_count; ++m) models.push_back(data.model(m));

  LearnResult out;
  out.taus.reserve(m_count);
  for (int m = 0; m < m_count; ++m) out.taus.push_back(init_pseudomarginals(models[m]));

  GramCache cache = build_gram_cache(data, out.taus, cfg.refresh_every);
  std::vector<double> rbar = cache.residual;
  std::vector<detail::SampleWork> work(m_count);
  Rng rng(cfg.rng_seed);
  const auto start = std::chrono::steady_clock::now();
  const double eta_max = 1.0 - cfg.boundary_eps;
  long epochs_recorded = 0;

  for (long t = 0; t < cfg.max_iters; ++t) {
    const bool epoch = (t % m_count) == 0;
    TraceRow row;
    if (epoch) {
      const std::vector<double> theta = theta_from_cache(cache, lambda);
      detail::sample_sweep(models, out.taus, theta, rho, oracle, cfg.threads, work);
      double total_gap = 0.0;
      for (const auto& w : work) total_gap += w.gap;
      const double objective =
          dual_objective_from_residual(cache.residual, data, out.taus, lambda, rho);
      if (epochs_recorded % cfg.validate_every == 0) detail::audit_feasibility(models, out.taus);
      ++epochs_recorded;
      row = TraceRow{t, objective, total_gap, 0.0, detail::elapsed_seconds(start)};
      out.total_gap = total_gap;
      out.sample_gaps.resize(m_count);
      for (int m = 0; m < m_count; ++m) out.sample_gaps[m] = work[m].gap;
      out.iterations = t;
      if (total_gap <= cfg.gap_tol) {
        out.trace.push_back(row);
        out.converged = true;
        break;
      }
    }

    const int m = rng.uniform_int(m_count);
    const std::vector<double> theta = theta_from_cache(cache, lambda);
    Pseudomarginals grad;
    VertexSolution sol;
    try {
      grad = grad_dual_sample(models[m], out.taus[m], theta, rho);
      sol = oracle(models[m], grad);
    } catch (...) {
      detail::rethrow_with_sample(m, std::current_exception());
    }
    const std::vector<double> qdir = direction_features(models[m], out.taus[m], sol.vertex);

    double gamma;
    if (cfg.step_rule == StepRule::Decay) {
      gamma = std::min(decay_step_block(t, m_count), eta_max);
    } else {
      SegmentObjective h;
      h.q0 = squared_norm(cache.residual) / (2.0 * lambda);
      h.q1 = -dot(cache.residual, qdir) / lambda;
      h.q2 = squared_norm(qdir) / (2.0 * lambda);
      h.rho = &rho;
      h.pieces.push_back({&models[m], &out.taus[m], &sol.vertex});
      gamma = line_search_minimize(h, eta_max);
    }
    if (epoch) {
      row.gamma = gamma;
      out.trace.push_back(row);
    }

    tau_mix(out.taus[m], gamma, sol.vertex);
    axpy(cache.residual, -gamma, qdir);
    ++cache.updates_since_refresh;
    maybe_refresh_cache(cache, data, out.taus);
    if (cfg.averaging) {
      const double w = 2.0 / (static_cast<double>(t) + 2.0);
      for (size_t i = 0; i < rbar.size(); ++i)
        rbar[i] = (1.0 - w) * rbar[i] + w * cache.residual[i];
    }
    if (epoch && on_epoch) {
      const std::vector<double> th = theta_from_cache(cache, lambda);
      if (cfg.averaging) {
        std::vector<double> th_avg = rbar;
        for (double& v : th_avg) v /= lambda;
        on_epoch(t, th, th_avg);
      } else {
        on_epoch(t, th, th);
      }
    }
  }

  out.theta = theta_from_cache(cache, lambda);
  if (cfg.averaging) {
    out.theta_avg = rbar;
    for (double& v : out.theta_avg) v /= lambda;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Marginal inference
// ---------------------------------------------------------------------------

struct InferResult {
  Pseudomarginals marginals;
  double log_z = 0.0;  // -F_rho at the returned point
  double gap = std::numeric_limits<double>::infinity();
  FreeEnergyValue fe;
  std::vector<TraceRow> trace;
  long iterations = 0;
  bool converged = false;
};

/// Minimizes F_rho(tau; theta) over the polytope with FW; returns the
/// pseudomarginals and -F as the log partition estimate, certified by the
/// final duality gap.
inline InferResult fw_infer(const StructuredModel& model, const std::vector<double>& theta,
                            const Reweighting& rho, const FWConfig& cfg,
                            const MapOracle& oracle = default_map_oracle()) {
  check_config(cfg);
  check_rho(rho, model);
  check_theta(model, theta);

  Pseudomarginals neg_scores = zeros_like_tau(model);
  if (model.is_matching()) {
    const std::vector<double> s = matching_edge_scores(model, theta);
    for (size_t e = 0; e < s.size(); ++e) neg_scores.edge[e] = -s[e];
  } else {
    const GridScores s = grid_scores(model, theta);
    for (size_t i = 0; i < s.node.size(); ++i) neg_scores.node[i] = -s.node[i];
    for (size_t i = 0; i < s.edge.size(); ++i) neg_scores.edge[i] = -s.edge[i];
  }

  InferResult out;
  out.marginals = init_pseudomarginals(model);
  const auto start = std::chrono::steady_clock::now();
  const double eta_max = 1.0 - cfg.boundary_eps;
  long epochs_recorded = 0;

  for (long t = 0; t < cfg.max_iters; ++t) {
    Pseudomarginals grad = grad_entropy(out.marginals, model, rho);
    // grad F = -scores - grad H
    for (size_t i = 0; i < grad.node.size(); ++i)
      grad.node[i] = neg_scores.node[i] - grad.node[i];
    for (size_t i = 0; i < grad.edge.size(); ++i)
      grad.edge[i] = neg_scores.edge[i] - grad.edge[i];
    const VertexSolution sol = oracle(model, grad);
    const double gap = duality_gap(out.marginals, sol.vertex, grad);
    const double objective = tau_dot(neg_scores, out.marginals) -
                             entropy_rw(out.marginals, model, rho);

    if (epochs_recorded % cfg.validate_every == 0)
      if (!validate_local_polytope(out.marginals, model, 1e-9))
        throw InvariantError("inference iterate left the local polytope");
    ++epochs_recorded;

    TraceRow row{t, objective, gap, 0.0, detail::elapsed_seconds(start)};
    out.gap = gap;
    out.iterations = t;
    if (gap <= cfg.gap_tol) {
      out.trace.push_back(row);
      out.converged = true;
      break;
    }
    double gamma;
    if (cfg.step_rule == StepRule::Decay) {
      gamma = std::min(decay_step_batch(t), eta_max);
    } else {
      const SegmentObjective h =
          make_inference_segment(model, out.marginals, sol.vertex, neg_scores, rho);
      gamma = line_search_minimize(h, eta_max);
    }
    row.gamma = gamma;
    out.trace.push_back(row);
    tau_mix(out.marginals, gamma, sol.vertex);
  }

  out.fe.energy = tau_dot(neg_scores, out.marginals);
  out.fe.entropy = entropy_rw(out.marginals, model, rho);
  out.fe.total = out.fe.energy - out.fe.entropy;
  out.log_z = -out.fe.total;
  return out;
}

// ---------------------------------------------------------------------------
// Curvature diagnostic
// ---------------------------------------------------------------------------

struct PolytopeObjective {
  std::function<double(const Pseudomarginals&)> value;
  std::function<Pseudomarginals(const Pseudomarginals&)> gradient;
};

inline PolytopeObjective free_energy_objective(const StructuredModel& model,
                                               const std::vector<double>& theta,
                                               const Reweighting& rho) {
  PolytopeObjective f;
  f.value = [&model, theta, &rho](const Pseudomarginals& tau) {
    return free_energy(tau, model, theta, rho).total;
  };
  f.gradient = [&model, theta, &rho](const Pseudomarginals& tau) {
    Pseudomarginals g = grad_entropy(tau, model, rho);
    if (model.is_matching()) {
      const std::vector<double> s = matching_edge_scores(model, theta);
      for (size_t e = 0; e < g.edge.size(); ++e) g.edge[e] = -s[e] - g.edge[e];
    } else {
      const GridScores s = grid_scores(model, theta);
      for (size_t i = 0; i < g.node.size(); ++i) g.node[i] = -s.node[i] - g.node[i];
      for (size_t i = 0; i < g.edge.size(); ++i) g.edge[i] = -s.edge[i] - g.edge[i];
    }
    return g;
  };
  return f;
}

/// Empirical lower bound on the FW curvature constant from random segment
/// probes: max over samples of (2/gamma^2)(F(y) - F(x) - <y-x, grad F(x)>).
/// A diagnostic, not a certified bound. Probe points are convex combinations
/// of the interior initializer and vertices drawn from random linear
/// subproblems; interior_shrink > 0 pulls every probe toward the initializer.
inline double curvature_bound_estimate(const StructuredModel& model, const PolytopeObjective& f,
                                       int num_probes, Rng& rng,
                                       const MapOracle& oracle = default_map_oracle(),
                                       double interior_shrink = 0.0) {
  const Pseudomarginals root = init_pseudomarginals(model);
  auto random_vertex = [&]() {
    Pseudomarginals costs = zeros_like_tau(model);
    for (double& v : costs.node) v = rng.normal();
    for (double& v : costs.edge) v = rng.normal();
    return oracle(model, costs).vertex;
  };
  auto random_point = [&]() {
    Pseudomarginals x = root;
    const int mixes = 1 + rng.uniform_int(3);
    for (int i = 0; i < mixes; ++i) tau_mix(x, rng.uniform(), random_vertex());
    if (interior_shrink > 0.0) {
      Pseudomarginals pulled = root;
      tau_mix(pulled, 1.0 - interior_shrink, x);
      return pulled;
    }
    return x;
  };

  double best = 0.0;
  for (int p = 0; p < num_probes; ++p) {
    const Pseudomarginals x = random_point();
    const Pseudomarginals xp = random_point();
    const double gamma = std::max(rng.uniform(), 1e-3);
    Pseudomarginals y = x;
    tau_mix(y, gamma, xp);
    const Pseudomarginals g = f.gradient(x);
    double lin = 0.0;
    for (size_t i = 0; i < g.node.size(); ++i) lin += (y.node[i] - x.node[i]) * g.node[i];
    for (size_t i = 0; i < g.edge.size(); ++i) lin += (y.edge[i] - x.edge[i]) * g.edge[i];
    const double c = 2.0 / (gamma * gamma) * (f.value(y) - f.value(x) - lin);
    if (std::isfinite(c)) best = std::max(best, c);
  }
  return best;
}

}  // namespace mlestruct
