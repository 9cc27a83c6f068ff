#pragma once

#include <bit>
#include <cmath>
#include <map>
#include <vector>

#include "mlestruct/common.hpp"
#include "mlestruct/frank_wolfe.hpp"
#include "mlestruct/model.hpp"

namespace mlestruct {

// ---------------------------------------------------------------------------
// Permanents
// ---------------------------------------------------------------------------

/// Exact permanent by Ryser's inclusion-exclusion over column subsets in
/// Gray-code order, O(2^n n). Capped at n = 20.
inline double ryser_permanent(const Matrix& a) {
  const int n = a.rows();
  if (n != a.cols() || n < 1) throw StructuralError("permanent needs a square matrix");
  if (n > 20) throw SizeCapError("ryser_permanent capped at n = 20");
  std::vector<double> row_sums(n, 0.0);
  double total = 0.0;
  uint32_t prev_gray = 0;
  int sign = 1;  // (-1)^|S| of the current subset
  for (uint32_t k = 1; k < (1u << n); ++k) {
    const uint32_t gray = k ^ (k >> 1);
    const uint32_t diff = gray ^ prev_gray;
    const int j = std::countr_zero(diff);
    const double dirn = (gray & diff) ? 1.0 : -1.0;
    for (int i = 0; i < n; ++i) row_sums[i] += dirn * a(i, j);
    sign = -sign;  // each Gray step toggles one column, so parity flips
    prev_gray = gray;
    double prod = 1.0;
    for (int i = 0; i < n; ++i) prod *= row_sums[i];
    total += sign * prod;
  }
  return ((n % 2) ? -1.0 : 1.0) * total;
}

/// log per(exp(W)) with per-row rescaling to dodge overflow; exact up to
/// float rounding for any finite W (n <= 20).
inline double log_permanent_of_exp(const Matrix& w) {
  const int n = w.rows();
  if (n != w.cols() || n < 1) throw StructuralError("permanent needs a square matrix");
  Matrix scaled(n, n);
  double shift = 0.0;
  for (int i = 0; i < n; ++i) {
    double mi = w(i, 0);
    for (int j = 1; j < n; ++j) mi = std::max(mi, w(i, j));
    shift += mi;
    for (int j = 0; j < n; ++j) scaled(i, j) = std::exp(w(i, j) - mi);
  }
  const double p = ryser_permanent(scaled);
  if (!(p > 0.0)) throw DomainError("permanent of a positive matrix came out non-positive");
  return shift + std::log(p);
}

// ---------------------------------------------------------------------------
// Exact partition functions and marginals
// ---------------------------------------------------------------------------

enum class ExactMethod { Ryser, Enumeration };

struct ExactInferenceResult {
  double log_z = 0.0;
  Pseudomarginals marginals;
  ExactMethod method = ExactMethod::Enumeration;
};

namespace detail {

inline Matrix log_weight_minor(const Matrix& w, int drop_row, int drop_col) {
  Matrix m(w.rows() - 1, w.cols() - 1);
  for (int i = 0, ii = 0; i < w.rows(); ++i) {
    if (i == drop_row) continue;
    for (int j = 0, jj = 0; j < w.cols(); ++j) {
      if (j == drop_col) continue;
      m(ii, jj) = w(i, j);
      ++jj;
    }
    ++ii;
  }
  return m;
}

/// log Z over perfect matchings of every vertex subset (log-domain DP).
inline std::vector<double> general_matching_log_z_table(const GeneralGraph& g,
                                                        const std::vector<double>& edge_scores) {
  const int n = g.num_vertices;
  const auto adj = matching_dp::adjacency_masks(g);
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<double> logz(size_t{1} << n, kNegInf);
  logz[0] = 0.0;
  std::vector<double> vals;
  vals.reserve(n);
  for (uint32_t mask = 1; mask < (1u << n); ++mask) {
    const int i = std::countr_zero(mask);
    vals.clear();
    uint32_t cand = mask & adj[i];
    while (cand) {
      const int j = std::countr_zero(cand);
      cand &= cand - 1;
      if (j == i) continue;
      const double sub = logz[mask & ~(1u << i) & ~(1u << j)];
      if (sub == kNegInf) continue;
      vals.push_back(edge_scores[g.edge_index(i, j)] + sub);
    }
    if (!vals.empty()) logz[mask] = logsumexp(vals);
  }
  return logz;
}

}  // namespace detail

/// Exact log partition function and marginals. Bipartite matchings go
/// through Ryser permanents of exp(W) and its minors; general matchings and
/// grids are exhausted (subset DP / configuration enumeration).
inline ExactInferenceResult exact_partition(const StructuredModel& model,
                                            const std::vector<double>& theta) {
  check_theta(model, theta);
  ExactInferenceResult out;
  out.marginals = zeros_like_tau(model);
  switch (model.kind) {
    case ModelKind::BipartiteMatching: {
      if (model.n > 20) throw SizeCapError("exact bipartite partition capped at n = 20");
      const Matrix w = edge_weight_matrix(model, theta);
      out.log_z = log_permanent_of_exp(w);
      for (int i = 0; i < model.n; ++i)
        for (int j = 0; j < model.n; ++j) {
          if (model.n == 1) {
            out.marginals.edge[0] = 1.0;
            continue;
          }
          const double lm = log_permanent_of_exp(detail::log_weight_minor(w, i, j));
          out.marginals.edge[i * model.n + j] = std::exp(w(i, j) + lm - out.log_z);
        }
      out.method = ExactMethod::Ryser;
      return out;
    }
    case ModelKind::GeneralPerfectMatching: {
      const auto scores = matching_edge_scores(model, theta);
      const auto table = detail::general_matching_log_z_table(model.graph, scores);
      const uint32_t full = (1u << model.graph.num_vertices) - 1;
      out.log_z = table[full];
      if (!std::isfinite(out.log_z)) throw InfeasibleError("graph admits no perfect matching");
      for (int e = 0; e < model.graph.num_edges(); ++e) {
        const auto [a, b] = model.graph.edges[e];
        const double rest = table[full & ~(1u << a) & ~(1u << b)];
        out.marginals.edge[e] =
            std::isfinite(rest) ? std::exp(scores[e] + rest - out.log_z) : 0.0;
      }
      out.method = ExactMethod::Enumeration;
      return out;
    }
    case ModelKind::PairwiseBinaryGrid: {
      const int nn = model.grid.num_nodes();
      if (nn > 20) throw SizeCapError("exact grid partition capped at 2^20 configurations");
      const GridScores sc = grid_scores(model, theta);
      const int ne = model.grid.num_edges();
      std::vector<double> scores(size_t{1} << nn);
      for (uint32_t mask = 0; mask < (1u << nn); ++mask) {
        double s = 0.0;
        for (int v = 0; v < nn; ++v) s += sc.node[2 * v + ((mask >> v) & 1u)];
        for (int e = 0; e < ne; ++e) {
          const auto [a, b] = model.grid.edges[e];
          s += sc.edge[4 * e + ((mask >> a) & 1u) * 2 + ((mask >> b) & 1u)];
        }
        scores[mask] = s;
      }
      out.log_z = logsumexp(scores);
      for (uint32_t mask = 0; mask < (1u << nn); ++mask) {
        const double p = std::exp(scores[mask] - out.log_z);
        for (int v = 0; v < nn; ++v) out.marginals.node[2 * v + ((mask >> v) & 1u)] += p;
        for (int e = 0; e < ne; ++e) {
          const auto [a, b] = model.grid.edges[e];
          out.marginals.edge[4 * e + ((mask >> a) & 1u) * 2 + ((mask >> b) & 1u)] += p;
        }
      }
      out.method = ExactMethod::Enumeration;
      return out;
    }
  }
  throw StructuralError("unknown model kind");
}

// ---------------------------------------------------------------------------
// Exact regularized likelihood and MLE
// ---------------------------------------------------------------------------

namespace detail {

/// Runs fn once per distinct feature set (samples usually share features).
template <class Fn>
inline void for_each_feature_group(const Dataset& data, Fn&& fn) {
  std::map<const Features*, std::vector<int>> groups;
  for (int m = 0; m < data.size(); ++m) groups[data.features[m].get()].push_back(m);
  for (const auto& [feat, members] : groups) fn(members);
}

}  // namespace detail

/// Total regularized log-likelihood sum_m [<phi_m, theta> - log Z_m] -
/// (lambda/2)||theta||^2, with exact partition functions.
inline double exact_regularized_loglik(const Dataset& data, const std::vector<double>& theta,
                                       double lambda) {
  double ll = -0.5 * lambda * squared_norm(theta);
  detail::for_each_feature_group(data, [&](const std::vector<int>& members) {
    const StructuredModel mm = data.model(members.front());
    const double log_z = exact_partition(mm, theta).log_z;
    for (int m : members)
      ll += structure_score(mm, theta, data.observations[m]) - log_z;
  });
  return ll;
}

/// Gradient of the exact regularized log-likelihood in theta.
inline std::vector<double> exact_loglik_gradient(const Dataset& data,
                                                 const std::vector<double>& theta,
                                                 double lambda) {
  std::vector<double> g(theta.size(), 0.0);
  detail::for_each_feature_group(data, [&](const std::vector<int>& members) {
    const StructuredModel mm = data.model(members.front());
    const ExactInferenceResult ex = exact_partition(mm, theta);
    const std::vector<double> model_expect = feature_expectation(mm, ex.marginals);
    for (int m : members) {
      axpy(g, 1.0, observation_features(mm, data.observations[m]));
      axpy(g, -1.0, model_expect);
    }
  });
  axpy(g, -lambda, theta);
  return g;
}

struct ExactMleOptions {
  double grad_tol = 1e-8;
  long max_iters = 20000;
  double armijo_c = 1e-4;
  double step_init = 1.0;
};

struct ExactMleResult {
  std::vector<double> theta;
  double loglik = 0.0;
  double grad_norm = 0.0;
  long iterations = 0;
  bool converged = false;
};

/// Regularized MLE by gradient ascent with backtracking. Trial steps follow
/// the Barzilai-Borwein spectral rule, which handles the ill-conditioned
/// feature Grams that plain fixed-step ascent crawls on; the objective is
/// strongly concave for lambda > 0, so ||grad|| <= tol is reachable from any
/// start.
inline ExactMleResult exact_mle(const Dataset& data, double lambda, std::vector<double> theta0,
                                const ExactMleOptions& opt = {}) {
  detail::check_lambda(lambda);
  if (static_cast<int>(theta0.size()) != data.base.num_parameters())
    throw StructuralError("theta0 length does not match model");
  ExactMleResult res;
  res.theta = std::move(theta0);
  double ll = exact_regularized_loglik(data, res.theta, lambda);
  std::vector<double> prev_theta, prev_grad;
  for (long it = 0; it < opt.max_iters; ++it) {
    const std::vector<double> g = exact_loglik_gradient(data, res.theta, lambda);
    const double gnorm2 = squared_norm(g);
    res.grad_norm = std::sqrt(gnorm2);
    res.iterations = it;
    if (res.grad_norm <= opt.grad_tol) {
      res.converged = true;
      break;
    }
    double alpha = opt.step_init;
    if (!prev_theta.empty()) {
      // BB1 step: <dtheta, dtheta> / <dtheta, -dgrad>
      double num = 0.0, den = 0.0;
      for (size_t i = 0; i < g.size(); ++i) {
        const double dt = res.theta[i] - prev_theta[i];
        num += dt * dt;
        den += dt * (prev_grad[i] - g[i]);
      }
      if (den > 0.0 && std::isfinite(num / den))
        alpha = std::clamp(num / den, 1e-12, 1e8);
    }
    prev_theta = res.theta;
    prev_grad = g;
    std::vector<double> trial(res.theta.size());
    double trial_ll;
    while (true) {
      for (size_t i = 0; i < trial.size(); ++i) trial[i] = res.theta[i] + alpha * g[i];
      trial_ll = exact_regularized_loglik(data, trial, lambda);
      if (trial_ll >= ll + opt.armijo_c * alpha * gnorm2) break;
      alpha *= 0.5;
      if (alpha < 1e-18) throw InvariantError("exact_mle line search collapsed");
    }
    res.theta = trial;
    ll = trial_ll;
  }
  res.loglik = ll;
  return res;
}

// ---------------------------------------------------------------------------
// Approximate likelihoods and sandwich bounds
// ---------------------------------------------------------------------------

/// A value bracketed by solver certificates: the truth lies in [lo, hi].
struct BoundedValue {
  double estimate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Per-sample reweighted surrogate log-likelihood at theta,
///   (1/M) ( sum_m [<phi_m, theta> + Fhat_m] - (lambda/2)||theta||^2 ),
/// where Fhat_m is the achieved minimum of the free energy. The FW gap makes
/// the truth lie in [estimate - mean gap, estimate].
inline BoundedValue approx_regularized_loglik(const Dataset& data,
                                              const std::vector<double>& theta, double lambda,
                                              const Reweighting& rho, const FWConfig& cfg,
                                              const MapOracle& oracle = default_map_oracle()) {
  const int m_count = data.size();
  if (m_count == 0) throw StructuralError("empty dataset");
  double total = -0.5 * lambda * squared_norm(theta);
  double gap_total = 0.0;
  detail::for_each_feature_group(data, [&](const std::vector<int>& members) {
    const StructuredModel mm = data.model(members.front());
    const InferResult inf = fw_infer(mm, theta, rho, cfg, oracle);
    for (int m : members) {
      total += structure_score(mm, theta, data.observations[m]) + inf.fe.total;
      gap_total += inf.gap;
    }
  });
  BoundedValue v;
  v.estimate = total / m_count;
  v.hi = v.estimate;
  v.lo = v.estimate - gap_total / m_count;
  return v;
}

struct SandwichCheck {
  std::string name;
  double lhs = 0.0;  // certified lower end of the left side
  double rhs = 0.0;  // certified upper end of the right side
  bool holds = false;
};

struct SandwichReport {
  // All values are per-sample regularized log-likelihoods.
  double exact_at_mle = 0.0;    // true likelihood at the exact MLE
  double exact_at_bethe = 0.0;  // true likelihood at the Bethe estimator
  double exact_at_rw = 0.0;     // true likelihood at the reweighted estimator
  BoundedValue bethe_at_bethe;  // surrogate evaluated at its own estimator
  BoundedValue rw_at_rw;
  BoundedValue bethe_at_rw;  // cross evaluations
  BoundedValue rw_at_bethe;
  double learn_gap_bethe = 0.0;  // per-sample learning certificates
  double learn_gap_rw = 0.0;
  std::vector<SandwichCheck> checks;
  bool all_hold = false;
};

/// Evaluates the two-sided likelihood bounds at the Bethe (rho = 1) and
/// reweighted (rho = 1/2) estimators and asserts the inequality chains up to
/// certificate slack. learn_gap_* are the total FW gaps certified during
/// learning of each estimator.
inline SandwichReport sandwich_bounds(const Dataset& data, double lambda,
                                      const std::vector<double>& theta_bethe,
                                      double learn_gap_bethe,
                                      const std::vector<double>& theta_rw, double learn_gap_rw,
                                      const std::vector<double>& theta_exact,
                                      const FWConfig& infer_cfg,
                                      const MapOracle& oracle = default_map_oracle(),
                                      double slack = 1e-6) {
  const int m_count = data.size();
  if (m_count == 0) throw StructuralError("empty dataset");
  const Reweighting rho_b = uniform_rho(data.base, 1.0);
  const Reweighting rho_rw = uniform_rho(data.base, 0.5);

  SandwichReport rep;
  rep.exact_at_mle = exact_regularized_loglik(data, theta_exact, lambda) / m_count;
  rep.exact_at_bethe = exact_regularized_loglik(data, theta_bethe, lambda) / m_count;
  rep.exact_at_rw = exact_regularized_loglik(data, theta_rw, lambda) / m_count;
  rep.bethe_at_bethe = approx_regularized_loglik(data, theta_bethe, lambda, rho_b, infer_cfg, oracle);
  rep.rw_at_rw = approx_regularized_loglik(data, theta_rw, lambda, rho_rw, infer_cfg, oracle);
  rep.bethe_at_rw = approx_regularized_loglik(data, theta_rw, lambda, rho_b, infer_cfg, oracle);
  rep.rw_at_bethe = approx_regularized_loglik(data, theta_bethe, lambda, rho_rw, infer_cfg, oracle);
  rep.learn_gap_bethe = learn_gap_bethe / m_count;
  rep.learn_gap_rw = learn_gap_rw / m_count;

  // The learning certificate extends the bracket of the surrogate optimum:
  // max l_rho lies within learn_gap of the value at the learned estimator.
  BoundedValue opt_bethe = rep.bethe_at_bethe;
  opt_bethe.hi += rep.learn_gap_bethe;
  BoundedValue opt_rw = rep.rw_at_rw;
  opt_rw.hi += rep.learn_gap_rw;

  auto add_check = [&](const std::string& name, double lhs_lo, double rhs_hi) {
    SandwichCheck c{name, lhs_lo, rhs_hi, lhs_lo <= rhs_hi + slack};
    rep.checks.push_back(c);
  };
  // optimum chain
  add_check("rw_opt <= exact_opt", opt_rw.lo, rep.exact_at_mle);
  add_check("exact_opt <= bethe_opt", rep.exact_at_mle, opt_bethe.hi);
  // pointwise chains at each estimator
  add_check("rw(bethe_est) <= exact(bethe_est)", rep.rw_at_bethe.lo, rep.exact_at_bethe);
  add_check("exact(bethe_est) <= bethe(bethe_est)", rep.exact_at_bethe, rep.bethe_at_bethe.hi);
  add_check("rw(rw_est) <= exact(rw_est)", rep.rw_at_rw.lo, rep.exact_at_rw);
  add_check("exact(rw_est) <= bethe(rw_est)", rep.exact_at_rw, rep.bethe_at_rw.hi);
  // the exact MLE dominates both estimators under the true likelihood
  add_check("exact(bethe_est) <= exact_opt", rep.exact_at_bethe, rep.exact_at_mle);
  add_check("exact(rw_est) <= exact_opt", rep.exact_at_rw, rep.exact_at_mle);

  rep.all_hold = true;
  for (const auto& c : rep.checks) rep.all_hold = rep.all_hold && c.holds;
  return rep;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

struct FdReport {
  double max_rel_error = 0.0;
  int worst_coordinate = -1;
  int worst_point = -1;
};

/// Central-difference audit of an analytic gradient over probe points.
/// Relative error per coordinate is |fd - g| / max(1, |g|).
template <class F, class G>
inline FdReport finite_difference_check(F&& f, G&& grad,
                                        const std::vector<std::vector<double>>& points,
                                        double h = 1e-6) {
  FdReport rep;
  for (int p = 0; p < static_cast<int>(points.size()); ++p) {
    const std::vector<double>& x = points[p];
    const std::vector<double> g = grad(x);
    if (g.size() != x.size()) throw StructuralError("gradient size mismatch");
    std::vector<double> probe = x;
    for (size_t i = 0; i < x.size(); ++i) {
      probe[i] = x[i] + h;
      const double f_hi = f(probe);
      probe[i] = x[i] - h;
      const double f_lo = f(probe);
      probe[i] = x[i];
      const double fd = (f_hi - f_lo) / (2.0 * h);
      const double rel = std::abs(fd - g[i]) / std::max(1.0, std::abs(g[i]));
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_coordinate = static_cast<int>(i);
        rep.worst_point = p;
      }
    }
  }
  return rep;
}

}  // namespace mlestruct
