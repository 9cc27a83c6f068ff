#include <gtest/gtest.h>

#include <cmath>

#include "mlestruct/free_energy.hpp"
#include "test_util.hpp"

using namespace mlestruct;

namespace {

const double kLn2 = std::log(2.0);

StructuredModel uniform_bipartite(int n, Rng& rng, int k = 2) {
  return testutil::random_bipartite_model(n, k, rng);
}

/// Naive double-sum energy oracle, written directly from the definition.
double energy_oracle(const Pseudomarginals& tau, const StructuredModel& m,
                     const std::vector<double>& theta) {
  double e = 0.0;
  if (m.is_matching()) {
    for (int slot = 0; slot < m.num_edge_slots(); ++slot) {
      double w = 0.0;
      for (int k = 0; k < m.K; ++k) {
        if (m.kind == ModelKind::BipartiteMatching)
          w += theta[k] * m.features->matching[k](slot / m.n, slot % m.n);
        else
          w += theta[k] *
               m.features->matching[k](m.graph.edges[slot].first, m.graph.edges[slot].second);
      }
      e -= tau.edge[slot] * w;
    }
    return e;
  }
  for (int v = 0; v < m.grid.num_nodes(); ++v)
    for (int l = 0; l < 2; ++l) {
      double s = 0.0;
      for (int c = 0; c < m.C; ++c) s += theta[l * m.C + c] * m.features->grid_node(v, c);
      e -= tau.node[2 * v + l] * s;
    }
  for (int ed = 0; ed < m.grid.num_edges(); ++ed)
    for (int st = 0; st < 4; ++st) {
      double s = 0.0;
      for (int d = 0; d < m.D; ++d) s += theta[2 * m.C + st * m.D + d] * m.features->grid_edge(ed, d);
      e -= tau.edge[4 * ed + st] * s;
    }
  return e;
}

}  // namespace

// ---------------------------------------------------------------------------
// energy
// ---------------------------------------------------------------------------

TEST(Energy, ZeroThetaIsZero) {
  Rng rng(3);
  const StructuredModel m = uniform_bipartite(3, rng);
  const Pseudomarginals tau = testutil::random_interior_point(m, rng);
  EXPECT_DOUBLE_EQ(energy(tau, m, {0.0, 0.0}), 0.0);
}

TEST(Energy, PointMassGivesNegatedScore) {
  Rng rng(5);
  const StructuredModel bm = uniform_bipartite(4, rng);
  const std::vector<double> theta = testutil::random_theta(bm, rng);
  const std::vector<int> y = testutil::random_permutation(4, rng);
  EXPECT_NEAR(energy(embed_observation(bm, y), bm, theta), -structure_score(bm, theta, y),
              1e-12);

  const StructuredModel gm = testutil::random_general_matching_model(6, 2, rng);
  const std::vector<double> gtheta = testutil::random_theta(gm, rng);
  const auto all = matching_dp::enumerate_perfect_matchings(gm.graph);
  const std::vector<int>& my = all.front();
  // general-graph convention: the score is half the trace of W Y
  const Matrix w = edge_weight_matrix(gm, gtheta);
  const Pseudomarginals ty = embed_observation(gm, my);
  double half_trace = 0.0;
  for (int a = 0; a < gm.graph.num_vertices; ++a) half_trace += 0.5 * w(a, my[a]);
  EXPECT_NEAR(energy(ty, gm, gtheta), -half_trace, 1e-12);
}

TEST(Energy, MatchesNaiveSummationOracle) {
  Rng rng(7);
  const StructuredModel bm = uniform_bipartite(4, rng);
  const std::vector<double> btheta = testutil::random_theta(bm, rng);
  const Pseudomarginals btau = testutil::random_interior_point(bm, rng);
  EXPECT_NEAR(energy(btau, bm, btheta), energy_oracle(btau, bm, btheta), 1e-12);

  const StructuredModel gm = testutil::random_grid_model(2, 3, 2, 2, rng);
  const std::vector<double> gtheta = testutil::random_theta(gm, rng);
  const Pseudomarginals gtau = testutil::random_interior_point(gm, rng);
  EXPECT_NEAR(energy(gtau, gm, gtheta), energy_oracle(gtau, gm, gtheta), 1e-12);
}

// ---------------------------------------------------------------------------
// entropy_rw_grid
// ---------------------------------------------------------------------------

TEST(GridEntropy, SingleBinaryNode) {
  Rng rng(9);
  const StructuredModel m = testutil::random_grid_model(1, 1, 1, 1, rng);
  Pseudomarginals tau = init_pseudomarginals(m);
  EXPECT_NEAR(entropy_rw_grid(tau, m, default_rho(m)), kLn2, 1e-14);
}

TEST(GridEntropy, TwoNodesOneEdgeUniform) {
  Rng rng(11);
  const StructuredModel m = testutil::random_grid_model(1, 2, 1, 1, rng);
  const Pseudomarginals tau = init_pseudomarginals(m);
  // at independence the mutual information vanishes, so any rho gives
  // H_i + H_j = 2 ln 2
  EXPECT_NEAR(entropy_rw_grid(tau, m, uniform_rho(m, 1.0)), 2 * kLn2, 1e-14);
  EXPECT_NEAR(entropy_rw_grid(tau, m, uniform_rho(m, 0.0)), 2 * kLn2, 1e-14);
}

TEST(GridEntropy, NegativeEntriesRejected) {
  Rng rng(13);
  const StructuredModel m = testutil::random_grid_model(1, 2, 1, 1, rng);
  Pseudomarginals tau = init_pseudomarginals(m);
  tau.node[0] = -0.2;
  EXPECT_THROW(entropy_rw_grid(tau, m, default_rho(m)), DomainError);
}

TEST(GridEntropy, RegroupedFormEqualsDefinitionOnPolytope) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const StructuredModel m = testutil::random_grid_model(2, 3, 1, 1, rng);
    const Pseudomarginals tau = testutil::random_interior_point(m, rng);
    const Reweighting rho = testutil::random_rho(m, rng);
    EXPECT_NEAR(entropy_rw_grid(tau, m, rho), entropy_rw_grid_mi(tau, m, rho), 1e-10);
  }
}

// ---------------------------------------------------------------------------
// entropy_rw_matching
// ---------------------------------------------------------------------------

TEST(MatchingEntropy, TwoByTwoHalfBethe) {
  Rng rng(19);
  const StructuredModel m = uniform_bipartite(2, rng);
  const Pseudomarginals tau = init_pseudomarginals(m);  // all 1/2
  EXPECT_NEAR(entropy_rw_matching(tau, m, uniform_rho(m, 1.0)), 0.0, 1e-14);
  EXPECT_NEAR(entropy_rw_matching(tau, m, uniform_rho(m, 0.5)), 2 * kLn2, 1e-14);
}

TEST(MatchingEntropy, IntegralMatchingHasZeroEntropy) {
  Rng rng(23);
  const StructuredModel m = uniform_bipartite(4, rng);
  const Pseudomarginals tau = embed_observation(m, testutil::random_permutation(4, rng));
  EXPECT_NEAR(entropy_rw_matching(tau, m, testutil::random_rho(m, rng)), 0.0, 1e-14);
}

TEST(MatchingEntropy, OutOfRangeRejected) {
  Rng rng(29);
  const StructuredModel m = uniform_bipartite(2, rng);
  Pseudomarginals tau = init_pseudomarginals(m);
  tau.edge[0] = 1.2;
  EXPECT_THROW(entropy_rw_matching(tau, m, default_rho(m)), DomainError);
}

TEST(MatchingEntropy, UniformBetheSignPattern) {
  // H'_1 at tau = 1/n: zero for n = 2, positive for n >= 3, equal to the
  // closed-form n^2 [(1-1/n) ln(1-1/n) + (1/n) ln n]
  Rng rng(31);
  for (int n = 2; n <= 6; ++n) {
    const StructuredModel m = uniform_bipartite(n, rng);
    const Pseudomarginals tau = init_pseudomarginals(m);
    const double h = entropy_rw_matching(tau, m, uniform_rho(m, 1.0));
    const double closed_form =
        n * n * ((1.0 - 1.0 / n) * std::log(1.0 - 1.0 / n) + (1.0 / n) * std::log(n));
    EXPECT_NEAR(h, closed_form, 1e-12);
    if (n == 2)
      EXPECT_NEAR(h, 0.0, 1e-14);
    else
      EXPECT_GT(h, 0.0);
  }
}

TEST(MatchingEntropy, ExplicitSlackTermsOnRelaxedPolytope) {
  // hand-checkable point: 4-cycle with tau = 0.25 everywhere, so every node
  // has degree 0.5 and slack 0.5
  GeneralGraph g(4, {{0, 1}, {1, 2}, {2, 3}, {0, 3}});
  auto f = std::make_shared<Features>();
  f->matching.push_back(Matrix(4, 4));
  const StructuredModel m = make_general_matching_model(g, f);
  ASSERT_FALSE(m.clamps->any());
  Pseudomarginals tau = zeros_like_tau(m);
  std::fill(tau.edge.begin(), tau.edge.end(), 0.25);
  const Reweighting rho = uniform_rho(m, 1.0);
  const double expected = 4.0 * (0.75 * std::log(0.75) - 0.25 * std::log(0.25))  //
                          - 4.0 * 0.5 * std::log(0.5);
  EXPECT_NEAR(entropy_rw_matching(tau, m, rho, SlackMode::Explicit), expected, 1e-14);
}

// ---------------------------------------------------------------------------
// free_energy
// ---------------------------------------------------------------------------

TEST(FreeEnergy, ZeroWeightUniform2x2) {
  auto f = std::make_shared<Features>();
  f->matching.push_back(Matrix(2, 2));
  const StructuredModel m = make_bipartite_model(2, f);
  const Pseudomarginals tau = init_pseudomarginals(m);
  const FreeEnergyValue bethe = free_energy(tau, m, {0.0}, uniform_rho(m, 1.0));
  EXPECT_NEAR(bethe.total, 0.0, 1e-14);
  const FreeEnergyValue rw = free_energy(tau, m, {0.0}, uniform_rho(m, 0.5));
  EXPECT_NEAR(rw.total, -2 * kLn2, 1e-14);
  EXPECT_DOUBLE_EQ(rw.total, rw.energy - rw.entropy);
}

TEST(FreeEnergy, PointMassEqualsNegatedScore) {
  Rng rng(37);
  const StructuredModel m = uniform_bipartite(3, rng);
  const std::vector<double> theta = testutil::random_theta(m, rng);
  const std::vector<int> y = testutil::random_permutation(3, rng);
  const FreeEnergyValue fe =
      free_energy(embed_observation(m, y), m, theta, testutil::random_rho(m, rng));
  EXPECT_NEAR(fe.entropy, 0.0, 1e-14);
  EXPECT_NEAR(fe.total, -structure_score(m, theta, y), 1e-12);
}

// ---------------------------------------------------------------------------
// grad_entropy
// ---------------------------------------------------------------------------

TEST(GradEntropy, FiniteDifferencesGrid) {
  Rng rng(41);
  const StructuredModel m = testutil::random_grid_model(2, 3, 1, 1, rng);
  const Reweighting rho = testutil::random_rho(m, rng);
  const Pseudomarginals shape = init_pseudomarginals(m);
  std::vector<std::vector<double>> points;
  for (int i = 0; i < 20; ++i)
    points.push_back(testutil::flatten(testutil::random_interior_point(m, rng)));
  const auto rep = finite_difference_check(
      [&](const std::vector<double>& x) {
        return entropy_rw_grid(testutil::unflatten(x, shape), m, rho);
      },
      [&](const std::vector<double>& x) {
        return testutil::flatten(grad_entropy(testutil::unflatten(x, shape), m, rho));
      },
      points, 1e-6);
  EXPECT_LT(rep.max_rel_error, 1e-5);
}

TEST(GradEntropy, FiniteDifferencesMatchingWithSlack) {
  Rng rng(43);
  const StructuredModel m = uniform_bipartite(4, rng);
  const Reweighting rho = testutil::random_rho(m, rng);
  const Pseudomarginals shape = init_pseudomarginals(m);
  std::vector<std::vector<double>> points;
  for (int i = 0; i < 20; ++i)
    points.push_back(testutil::flatten(testutil::random_tprime_point(m, rng)));
  const auto rep = finite_difference_check(
      [&](const std::vector<double>& x) {
        return entropy_rw_matching(testutil::unflatten(x, shape), m, rho, SlackMode::Explicit);
      },
      [&](const std::vector<double>& x) {
        return testutil::flatten(
            grad_entropy(testutil::unflatten(x, shape), m, rho, SlackMode::Explicit));
      },
      points, 1e-6);
  EXPECT_LT(rep.max_rel_error, 1e-5);
}

TEST(GradEntropy, SymmetricPointsHaveSymmetricGradients) {
  Rng rng(47);
  const StructuredModel gm = testutil::random_grid_model(2, 2, 1, 1, rng);
  const Pseudomarginals gtau = init_pseudomarginals(gm);
  const Pseudomarginals gg = grad_entropy(gtau, gm, uniform_rho(gm, 1.0));
  for (int v = 0; v < gm.grid.num_nodes(); ++v)
    EXPECT_NEAR(gg.node[2 * v], gg.node[2 * v + 1], 1e-13);

  const StructuredModel bm = uniform_bipartite(4, rng);
  const Pseudomarginals btau = init_pseudomarginals(bm);
  const Pseudomarginals bg = grad_entropy(btau, bm, uniform_rho(bm, 1.0));
  for (double v : bg.edge) EXPECT_NEAR(v, bg.edge[0], 1e-13);
}

TEST(GradEntropy, BoundaryIsRejected) {
  Rng rng(53);
  const StructuredModel m = uniform_bipartite(3, rng);
  Pseudomarginals tau = init_pseudomarginals(m);
  tau.edge[0] = 0.0;
  EXPECT_THROW(grad_entropy(tau, m, default_rho(m)), GradientUndefinedError);
  const StructuredModel g = testutil::random_grid_model(1, 2, 1, 1, rng);
  Pseudomarginals gt = init_pseudomarginals(g);
  gt.edge[1] = 0.0;
  EXPECT_THROW(grad_entropy(gt, g, default_rho(g)), GradientUndefinedError);
}

// ---------------------------------------------------------------------------
// Convexity of the reweighted free energy (matchings, any rho in [0,1]^V)
// ---------------------------------------------------------------------------

TEST(Convexity, MidpointTestOnRelaxedMatchingPolytope) {
  Rng rng(59);
  for (int trial = 0; trial < 100; ++trial) {
    const bool bipartite = rng.uniform() < 0.5;
    const StructuredModel m = bipartite
                                  ? uniform_bipartite(3 + rng.uniform_int(3), rng)
                                  : testutil::random_general_matching_model(6, 2, rng, 0.7);
    const std::vector<double> theta = testutil::random_theta(m, rng);
    const Reweighting rho = testutil::random_rho(m, rng);
    const Pseudomarginals a = testutil::random_tprime_point(m, rng);
    const Pseudomarginals b = testutil::random_tprime_point(m, rng);
    const Pseudomarginals mid = tau_interpolate(a, b, 0.5);
    const double fa = free_energy(a, m, theta, rho, SlackMode::Explicit).total;
    const double fb = free_energy(b, m, theta, rho, SlackMode::Explicit).total;
    const double fm = free_energy(mid, m, theta, rho, SlackMode::Explicit).total;
    EXPECT_LE(fm, 0.5 * (fa + fb) + 1e-10);
  }
}

// ---------------------------------------------------------------------------
// Segment evaluation used by the line search
// ---------------------------------------------------------------------------

TEST(EntropyAlong, MatchesInterpolatedEvaluation) {
  Rng rng(61);
  const StructuredModel m = uniform_bipartite(4, rng);
  const Reweighting rho = testutil::random_rho(m, rng);
  const Pseudomarginals tau = testutil::random_interior_point(m, rng);
  const Pseudomarginals s = embed_observation(m, testutil::random_permutation(4, rng));
  for (double eta : {0.0, 0.1, 0.5, 0.9, 0.999}) {
    const Pseudomarginals mix = tau_interpolate(tau, s, eta);
    EXPECT_NEAR(entropy_along(tau, s, eta, m, rho), entropy_rw_matching(mix, m, rho), 1e-11);
  }
  // derivative against centered differences in eta
  const double h = 1e-7;
  for (double eta : {0.1, 0.5, 0.9}) {
    const double fd =
        (entropy_along(tau, s, eta + h, m, rho) - entropy_along(tau, s, eta - h, m, rho)) /
        (2 * h);
    EXPECT_NEAR(entropy_derivative_along(tau, s, eta, m, rho), fd, 1e-5);
  }
}
