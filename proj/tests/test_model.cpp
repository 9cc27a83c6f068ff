#include <gtest/gtest.h>

#include <set>

#include "mlestruct/model.hpp"
#include "test_util.hpp"

using namespace mlestruct;
using testutil::random_matchable_graph;

namespace {

std::shared_ptr<const Features> empty_matching_features(int n, int k = 0) {
  auto f = std::make_shared<Features>();
  for (int i = 0; i < k; ++i) f->matching.push_back(Matrix(n, n));
  return f;
}

StructuredModel grid_1xN(int n) {
  auto f = std::make_shared<Features>();
  f->grid_node = Matrix(n, 1, 1.0);
  f->grid_edge = Matrix(n - 1, 1, 1.0);
  return make_grid_model(1, n, f);
}

}  // namespace

// ---------------------------------------------------------------------------
// validate_local_polytope
// ---------------------------------------------------------------------------

TEST(ValidatePolytope, UniformTwoNodeEdgeModelIsInterior) {
  const StructuredModel m = grid_1xN(2);
  Pseudomarginals tau = init_pseudomarginals(m);
  EXPECT_TRUE(validate_local_polytope(tau, m, 1e-9));
}

TEST(ValidatePolytope, UnnormalizedNodeMarginalFails) {
  const StructuredModel m = grid_1xN(2);
  Pseudomarginals tau = init_pseudomarginals(m);
  tau.node[0] = 0.7;
  tau.node[1] = 0.4;
  EXPECT_FALSE(validate_local_polytope(tau, m, 1e-9));
}

TEST(ValidatePolytope, DoublyStochasticThirdIsInterior) {
  const StructuredModel m = make_bipartite_model(3, empty_matching_features(3));
  Pseudomarginals tau = zeros_like_tau(m);
  std::fill(tau.edge.begin(), tau.edge.end(), 1.0 / 3.0);
  EXPECT_TRUE(validate_local_polytope(tau, m, 1e-9));
}

TEST(ValidatePolytope, DimensionMismatchIsStructuralError) {
  const StructuredModel m = make_bipartite_model(3, empty_matching_features(3));
  Pseudomarginals tau;
  tau.edge.assign(4, 0.25);
  EXPECT_THROW(validate_local_polytope(tau, m, 1e-9), StructuralError);
}

TEST(ValidatePolytope, GridEdgeConsistencyEnforced) {
  const StructuredModel m = grid_1xN(2);
  Pseudomarginals tau = init_pseudomarginals(m);
  tau.edge = {0.5, 0.0, 0.0, 0.5};  // consistent with (.5,.5) nodes
  EXPECT_TRUE(validate_local_polytope(tau, m, 1e-9));
  tau.edge = {0.4, 0.1, 0.0, 0.5};  // row sums ok for node a, broken for b
  EXPECT_FALSE(validate_local_polytope(tau, m, 1e-9));
}

// ---------------------------------------------------------------------------
// init_pseudomarginals
// ---------------------------------------------------------------------------

TEST(InitPseudomarginals, BipartiteIsUniformDoublyStochastic) {
  const StructuredModel m = make_bipartite_model(4, empty_matching_features(4));
  const Pseudomarginals tau = init_pseudomarginals(m);
  for (double v : tau.edge) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(InitPseudomarginals, CompleteK4AveragesAllThreeMatchings) {
  // oracle: enumerate the perfect matchings of K4 and average their
  // indicators; symmetry forces 1/3 per edge
  const GeneralGraph g = GeneralGraph::complete(4);
  const auto all = matching_dp::enumerate_perfect_matchings(g);
  ASSERT_EQ(all.size(), 3u);
  std::vector<double> oracle(g.num_edges(), 0.0);
  for (const auto& mate : all)
    for (int v = 0; v < 4; ++v)
      if (mate[v] > v) oracle[g.edge_index(v, mate[v])] += 1.0 / all.size();

  const StructuredModel m = make_general_matching_model(g, empty_matching_features(4));
  const Pseudomarginals tau = init_pseudomarginals(m);
  for (int e = 0; e < g.num_edges(); ++e) {
    EXPECT_NEAR(tau.edge[e], oracle[e], 1e-15);
    EXPECT_NEAR(tau.edge[e], 1.0 / 3.0, 1e-15);
  }
}

TEST(InitPseudomarginals, GridIsUniform) {
  const StructuredModel m = grid_1xN(2);
  const Pseudomarginals tau = init_pseudomarginals(m);
  EXPECT_DOUBLE_EQ(tau.node[0], 0.5);
  EXPECT_DOUBLE_EQ(tau.node[1], 0.5);
  for (double v : tau.edge) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(InitPseudomarginals, InfeasibleGraphRejected) {
  // a 4-cycle plus two pendant vertices attached to the same cycle node has
  // no perfect matching
  GeneralGraph g(6, {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {0, 4}, {0, 5}});
  EXPECT_THROW(make_general_matching_model(g, empty_matching_features(6)), InfeasibleError);
}

TEST(InitPseudomarginals, OddGraphRejected) {
  GeneralGraph g(3, {{0, 1}, {1, 2}});
  EXPECT_THROW(make_general_matching_model(g, empty_matching_features(3)), InfeasibleError);
}

TEST(InitPseudomarginals, AlwaysInsidePolytopeAndInterior) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int nv = 4 + 2 * rng.uniform_int(4);
    StructuredModel m;
    const int pick = rng.uniform_int(3);
    if (pick == 0)
      m = make_bipartite_model(2 + rng.uniform_int(5), empty_matching_features(7));
    else if (pick == 1)
      m = make_general_matching_model(random_matchable_graph(nv, 0.5, rng),
                                      testutil::random_symmetric_features(nv, 1, rng));
    else
      m = testutil::random_grid_model(1 + rng.uniform_int(3), 2 + rng.uniform_int(3), 1, 1, rng);
    const Pseudomarginals tau = init_pseudomarginals(m);
    EXPECT_TRUE(validate_local_polytope(tau, m, 1e-12));
    // strict interiority away from clamps
    for (int e = 0; e < static_cast<int>(tau.edge.size()); ++e) {
      if (m.kind == ModelKind::GeneralPerfectMatching && !m.clamps->is_free(e)) continue;
      if (m.kind == ModelKind::BipartiteMatching && m.n == 1) continue;
      EXPECT_GT(tau.edge[e], 0.0);
      EXPECT_LT(tau.edge[e], 1.0);
    }
  }
}

// ---------------------------------------------------------------------------
// clamp_analysis
// ---------------------------------------------------------------------------

TEST(ClampAnalysis, PathGraphForcesEndEdges) {
  GeneralGraph g(4, {{0, 1}, {1, 2}, {2, 3}});
  const StructuredModel m = make_general_matching_model(g, empty_matching_features(4));
  const ClampInfo& cl = *m.clamps;
  EXPECT_TRUE(cl.forced[m.graph.edge_index(0, 1)]);
  EXPECT_TRUE(cl.forced[m.graph.edge_index(2, 3)]);
  EXPECT_TRUE(cl.forbidden[m.graph.edge_index(1, 2)]);
}

TEST(ClampAnalysis, CompleteBipartite3x3HasNoClamps) {
  const StructuredModel m = make_bipartite_model(3, empty_matching_features(3));
  const ClampInfo cl = clamp_analysis(m);
  for (int e = 0; e < 9; ++e) {
    EXPECT_FALSE(cl.forced[e]);
    EXPECT_FALSE(cl.forbidden[e]);
  }
}

TEST(ClampAnalysis, MatchesEnumerationOracle) {
  Rng rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    const int nv = 4 + 2 * rng.uniform_int(3);  // 4, 6, 8
    GeneralGraph g = random_matchable_graph(nv, 0.35, rng);
    const StructuredModel m = make_general_matching_model(g, empty_matching_features(nv));
    const auto all = matching_dp::enumerate_perfect_matchings(m.graph);
    ASSERT_FALSE(all.empty());
    for (int e = 0; e < m.graph.num_edges(); ++e) {
      const auto [a, b] = m.graph.edges[e];
      int containing = 0;
      for (const auto& mate : all) containing += mate[a] == b;
      EXPECT_EQ(m.clamps->forbidden[e] != 0, containing == 0);
      EXPECT_EQ(m.clamps->forced[e] != 0, containing == static_cast<int>(all.size()));
    }
  }
}

TEST(ClampAnalysis, K4MinusOneEdge) {
  // remove (0,1): the opposite edge (2,3) pairs with nothing and is forbidden
  GeneralGraph g(4, {{0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}});
  const StructuredModel m = make_general_matching_model(g, empty_matching_features(4));
  const auto all = matching_dp::enumerate_perfect_matchings(g);
  ASSERT_EQ(all.size(), 2u);  // {02,13} and {03,12}
  EXPECT_TRUE(m.clamps->forbidden[g.edge_index(2, 3)]);
  for (const auto other : {std::pair{0, 2}, std::pair{0, 3}, std::pair{1, 2}, std::pair{1, 3}}) {
    const int e = g.edge_index(other.first, other.second);
    EXPECT_FALSE(m.clamps->forced[e]);
    EXPECT_FALSE(m.clamps->forbidden[e]);
  }
}

TEST(ClampAnalysis, RemovingForbiddenEdgePreservesMatchings) {
  Rng rng(31);
  int forbidden_seen = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const int nv = 4 + 2 * rng.uniform_int(4);  // up to 10 nodes
    GeneralGraph g = random_matchable_graph(nv, 0.3, rng);
    StructuredModel m;
    try {
      m = make_general_matching_model(g, empty_matching_features(nv));
    } catch (const InfeasibleError&) {
      continue;
    }
    const auto before = matching_dp::enumerate_perfect_matchings(g);
    for (int e = 0; e < g.num_edges(); ++e) {
      if (!m.clamps->forbidden[e]) continue;
      ++forbidden_seen;
      std::vector<std::pair<int, int>> pruned;
      for (int e2 = 0; e2 < g.num_edges(); ++e2)
        if (e2 != e) pruned.push_back(g.edges[e2]);
      const auto after = matching_dp::enumerate_perfect_matchings(GeneralGraph(nv, pruned));
      EXPECT_EQ(before, after);
    }
  }
  EXPECT_GT(forbidden_seen, 0);  // the sweep actually exercised the claim
}

// ---------------------------------------------------------------------------
// edge_weight_matrix
// ---------------------------------------------------------------------------

TEST(EdgeWeightMatrix, ZeroThetaGivesZero) {
  Rng rng(7);
  const StructuredModel m = testutil::random_bipartite_model(3, 2, rng);
  const Matrix w = edge_weight_matrix(m, {0.0, 0.0});
  for (double v : w.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(EdgeWeightMatrix, IdentityFeatureScales) {
  auto f = std::make_shared<Features>();
  f->matching.push_back(Matrix::identity(3));
  const StructuredModel m = make_bipartite_model(3, f);
  const Matrix w = edge_weight_matrix(m, {2.0});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(w(i, j), i == j ? 2.0 : 0.0);
}

TEST(EdgeWeightMatrix, MatchesDirectSummationOracle) {
  Rng rng(13);
  const StructuredModel m = testutil::random_bipartite_model(4, 2, rng);
  const std::vector<double> theta = {rng.normal(), rng.normal()};
  const Matrix w = edge_weight_matrix(m, theta);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const double expected =
          theta[0] * m.features->matching[0](i, j) + theta[1] * m.features->matching[1](i, j);
      EXPECT_NEAR(w(i, j), expected, 1e-15);
    }
}

TEST(EdgeWeightMatrix, LengthMismatchIsStructuralError) {
  Rng rng(5);
  const StructuredModel m = testutil::random_bipartite_model(3, 2, rng);
  EXPECT_THROW(edge_weight_matrix(m, {1.0}), StructuralError);
}

// ---------------------------------------------------------------------------
// Observations and datasets
// ---------------------------------------------------------------------------

TEST(Observations, EmbeddedVertexSatisfiesPolytopeExactly) {
  Rng rng(17);
  const Dataset data = testutil::random_bipartite_dataset(5, 3, 6, rng);
  for (int m = 0; m < data.size(); ++m) {
    const Pseudomarginals tau = embed_observation(data.model(m), data.observations[m]);
    EXPECT_TRUE(validate_local_polytope(tau, data.model(m), 0.0));
  }
  const Dataset grid = testutil::random_grid_dataset(2, 3, 2, 1, 4, rng);
  for (int m = 0; m < grid.size(); ++m) {
    const Pseudomarginals tau = embed_observation(grid.model(m), grid.observations[m]);
    EXPECT_TRUE(validate_local_polytope(tau, grid.model(m), 0.0));
  }
}

TEST(Observations, InvalidStructuresRejected) {
  const StructuredModel m = make_bipartite_model(3, empty_matching_features(3));
  EXPECT_THROW(check_observation(m, {0, 0, 1}), StructuralError);
  EXPECT_THROW(check_observation(m, {0, 1}), StructuralError);
  const StructuredModel g = grid_1xN(3);
  EXPECT_THROW(check_observation(g, {0, 2, 1}), StructuralError);
}

TEST(Observations, HammingLossCountsMismatchedNodes) {
  const StructuredModel m = make_bipartite_model(2, empty_matching_features(2));
  EXPECT_DOUBLE_EQ(hamming_loss(m, {0, 1}, {1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(hamming_loss(m, {0, 1}, {0, 1}), 0.0);
}

TEST(Reweighting, DefaultsAndValidation) {
  const StructuredModel b = make_bipartite_model(3, empty_matching_features(3));
  EXPECT_EQ(default_rho(b).values, std::vector<double>(6, 1.0));
  const StructuredModel g = grid_1xN(3);
  EXPECT_EQ(default_rho(g).values, std::vector<double>(2, 0.5));
  EXPECT_THROW(uniform_rho(b, 1.5), DomainError);
  Reweighting bad{std::vector<double>(6, -0.1)};
  EXPECT_THROW(check_rho(bad, b), DomainError);
}
