#pragma once

#include <cmath>
#include <vector>

#include "mlestruct/common.hpp"
#include "mlestruct/free_energy.hpp"
#include "mlestruct/model.hpp"

namespace mlestruct {

namespace detail {

inline void check_lambda(double lambda) {
  if (!(lambda > 0.0)) throw DomainError("lambda must be positive");
}

inline void check_taus(const Dataset& data, const std::vector<Pseudomarginals>& taus) {
  if (static_cast<int>(taus.size()) != data.size())
    throw StructuralError("one pseudomarginal block per sample required");
}

}  // namespace detail

/// residual(tau) = sum_m [phi_m(y_m) - phi_m(tau_m)], a vector of length
/// num_parameters. theta_star = residual / lambda.
inline std::vector<double> residual_from_scratch(const Dataset& data,
                                                 const std::vector<Pseudomarginals>& taus) {
  detail::check_taus(data, taus);
  std::vector<double> r(data.base.num_parameters(), 0.0);
  for (int m = 0; m < data.size(); ++m) {
    const StructuredModel mm = data.model(m);
    axpy(r, 1.0, observation_features(mm, data.observations[m]));
    axpy(r, -1.0, feature_expectation(mm, taus[m]));
  }
  return r;
}

/// Closed-form dual-to-primal map: the theta maximizing the regularized
/// saddle objective at fixed tau.
inline std::vector<double> theta_star(const Dataset& data,
                                      const std::vector<Pseudomarginals>& taus, double lambda) {
  detail::check_lambda(lambda);
  std::vector<double> theta = residual_from_scratch(data, taus);
  for (double& v : theta) v /= lambda;
  return theta;
}

/// Running feature residual plus bookkeeping for periodic refresh. The
/// cached vector must always equal residual_from_scratch up to float drift;
/// block updates keep it current in O(sample size).
struct GramCache {
  std::vector<double> residual;
  long updates_since_refresh = 0;
  int refresh_every = 1000;
};

inline GramCache build_gram_cache(const Dataset& data, const std::vector<Pseudomarginals>& taus,
                                  int refresh_every = 1000) {
  GramCache c;
  c.residual = residual_from_scratch(data, taus);
  c.refresh_every = refresh_every;
  return c;
}

/// Applies the residual delta of replacing sample m's pseudomarginals.
inline void update_gram_residual(GramCache& cache, const Dataset& data, int m,
                                 const Pseudomarginals& old_tau, const Pseudomarginals& new_tau) {
  const StructuredModel mm = data.model(m);
  axpy(cache.residual, 1.0, feature_expectation(mm, old_tau));
  axpy(cache.residual, -1.0, feature_expectation(mm, new_tau));
  ++cache.updates_since_refresh;
}

/// Recomputes the residual from scratch once the update counter hits the
/// refresh interval. Returns true when a refresh happened.
inline bool maybe_refresh_cache(GramCache& cache, const Dataset& data,
                                const std::vector<Pseudomarginals>& taus) {
  if (cache.updates_since_refresh < cache.refresh_every) return false;
  cache.residual = residual_from_scratch(data, taus);
  cache.updates_since_refresh = 0;
  return true;
}

inline std::vector<double> theta_from_cache(const GramCache& cache, double lambda) {
  detail::check_lambda(lambda);
  std::vector<double> theta = cache.residual;
  for (double& v : theta) v /= lambda;
  return theta;
}

/// Sum of reweighted entropies over all samples.
inline double total_entropy(const Dataset& data, const std::vector<Pseudomarginals>& taus,
                            const Reweighting& rho, SlackMode mode = SlackMode::Structural) {
  double h = 0.0;
  for (int m = 0; m < data.size(); ++m) h += entropy_rw(taus[m], data.model(m), rho, mode);
  return h;
}

/// L(tau) = ||residual||^2 / (2 lambda) - sum_m H_rho(tau_m); the dual of the
/// reweighted-Bethe likelihood. Equals the saddle objective at theta_star.
inline double dual_objective(const Dataset& data, const std::vector<Pseudomarginals>& taus,
                             double lambda, const Reweighting& rho,
                             SlackMode mode = SlackMode::Structural) {
  detail::check_lambda(lambda);
  const std::vector<double> r = residual_from_scratch(data, taus);
  return squared_norm(r) / (2.0 * lambda) - total_entropy(data, taus, rho, mode);
}

inline double dual_objective_from_residual(const std::vector<double>& residual,
                                           const Dataset& data,
                                           const std::vector<Pseudomarginals>& taus,
                                           double lambda, const Reweighting& rho,
                                           SlackMode mode = SlackMode::Structural) {
  detail::check_lambda(lambda);
  return squared_norm(residual) / (2.0 * lambda) - total_entropy(data, taus, rho, mode);
}

/// Gradient of L with respect to sample m's coordinates:
///   -<f_coord, theta_star> - dH_rho(tau_m)
/// theta is theta_star at the current tau block.
inline Pseudomarginals grad_dual_sample(const StructuredModel& model, const Pseudomarginals& tau,
                                        const std::vector<double>& theta, const Reweighting& rho,
                                        SlackMode mode = SlackMode::Structural) {
  Pseudomarginals g = grad_entropy(tau, model, rho, mode);
  if (model.is_matching()) {
    const std::vector<double> scores = matching_edge_scores(model, theta);
    for (size_t e = 0; e < g.edge.size(); ++e) {
      if (model.clamps && !model.clamps->is_free(static_cast<int>(e))) continue;  // fixed coord
      g.edge[e] = -scores[e] - g.edge[e];
    }
  } else {
    const GridScores s = grid_scores(model, theta);
    for (size_t i = 0; i < g.node.size(); ++i) g.node[i] = -s.node[i] - g.node[i];
    for (size_t i = 0; i < g.edge.size(); ++i) g.edge[i] = -s.edge[i] - g.edge[i];
  }
  return g;
}

inline std::vector<Pseudomarginals> grad_dual(const Dataset& data,
                                              const std::vector<Pseudomarginals>& taus,
                                              double lambda, const Reweighting& rho,
                                              SlackMode mode = SlackMode::Structural) {
  detail::check_taus(data, taus);
  const std::vector<double> theta = theta_star(data, taus, lambda);
  std::vector<Pseudomarginals> g;
  g.reserve(taus.size());
  for (int m = 0; m < data.size(); ++m)
    g.push_back(grad_dual_sample(data.model(m), taus[m], theta, rho, mode));
  return g;
}

}  // namespace mlestruct
