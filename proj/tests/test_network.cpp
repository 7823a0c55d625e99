#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>

#include "support.hpp"
#include "tvhsgt/network.hpp"

using namespace tvhsgt;

namespace {

// Floyd-Warshall reachability, independent of the BFS in the library.
bool reachable_all(const Digraph& g) {
  const int n = g.size();
  std::vector<std::vector<bool>> r(n, std::vector<bool>(n, false));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) r[i][j] = (i == j) || g.has_edge(i, j);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) r[i][j] = r[i][j] || (r[i][k] && r[k][j]);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (!r[i][j]) return false;
  return true;
}

// All simple paths s -> t by DFS; used to count edge usage of unique shortest paths.
void simple_paths(const Digraph& g, int u, int t, std::vector<int>& path, std::vector<bool>& seen,
                  std::vector<std::vector<int>>& out) {
  if (u == t) {
    out.push_back(path);
    return;
  }
  for (int v = 0; v < g.size(); ++v) {
    if (v == u || seen[v] || !g.has_edge(u, v)) continue;
    seen[v] = true;
    path.push_back(v);
    simple_paths(g, v, t, path, seen, out);
    path.pop_back();
    seen[v] = false;
  }
}

// Brute-force (diameter, max edge utility) for graphs whose shortest paths are unique.
std::pair<int, int> brute_stats(const Digraph& g) {
  const int n = g.size();
  std::map<std::pair<int, int>, int> use;
  int diameter = 0;
  for (int s = 0; s < n; ++s)
    for (int t = 0; t < n; ++t) {
      if (s == t) continue;
      std::vector<std::vector<int>> paths;
      std::vector<int> path{s};
      std::vector<bool> seen(n, false);
      seen[s] = true;
      simple_paths(g, s, t, path, seen, paths);
      std::size_t best = 1000;
      for (const auto& p : paths) best = std::min(best, p.size());
      int count = 0;
      const std::vector<int>* chosen = nullptr;
      for (const auto& p : paths)
        if (p.size() == best) {
          ++count;
          chosen = &p;
        }
      EXPECT_EQ(count, 1) << "test graph must have unique shortest paths";
      diameter = std::max(diameter, static_cast<int>(best) - 1);
      for (std::size_t k = 0; k + 1 < chosen->size(); ++k) ++use[{(*chosen)[k], (*chosen)[k + 1]}];
    }
  int k = 0;
  for (const auto& [e, c] : use) k = std::max(k, c);
  return {diameter, k};
}

}  // namespace

TEST(Digraph, FactoriesAndNeighbors) {
  const auto ring = Digraph::ring(4);
  EXPECT_TRUE(ring.has_edge(0, 1));
  EXPECT_TRUE(ring.has_edge(3, 0));
  EXPECT_FALSE(ring.has_edge(1, 0));
  EXPECT_EQ(ring.in_neighbors(0), std::vector<int>{3});
  EXPECT_EQ(ring.out_neighbors(0), std::vector<int>{1});
  EXPECT_EQ(Digraph::complete(4).edges().size(), 12u);
  EXPECT_EQ(Digraph::bidirectional_ring(5).edges().size(), 10u);
  EXPECT_TRUE(Digraph::ring(4).is_subgraph_of(Digraph::complete(4)));
  EXPECT_FALSE(Digraph::complete(4).is_subgraph_of(Digraph::ring(4)));
}

TEST(Digraph, StrongConnectivityAgreesWithBruteForce) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(5));
    Digraph g(n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j && rng.bernoulli(0.35)) g.add_edge(i, j);
    EXPECT_EQ(is_strongly_connected(g), reachable_all(g));
  }
}

TEST(GenerateRoundGraph, KeepProbOneReturnsBase) {
  const auto base = Digraph::bidirectional_ring(6);
  EXPECT_EQ(generate_round_graph(base, 1.0, 42, 7), base);
}

TEST(GenerateRoundGraph, TwoNodesKeepBothDirections) {
  const auto base = Digraph::complete(2);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto g = generate_round_graph(base, 0.3, seed, static_cast<long>(seed));
    EXPECT_TRUE(g.has_edge(0, 1));
    EXPECT_TRUE(g.has_edge(1, 0));
  }
}

TEST(GenerateRoundGraph, FiveNodeRingStaysStronglyConnected) {
  const auto base = Digraph::ring(5);
  for (long t = 0; t < 100; ++t) {
    const auto g = generate_round_graph(base, 0.5, 11, t);
    EXPECT_TRUE(reachable_all(g)) << "round " << t;
    EXPECT_TRUE(g.is_subgraph_of(base));
  }
}

TEST(GenerateRoundGraph, SubgraphConnectedAndDeterministic) {
  for (const auto& base : {Digraph::complete(7), Digraph::bidirectional_ring(7)}) {
    bool varied = false;
    for (long t = 0; t < 200; ++t) {
      const auto g = generate_round_graph(base, 0.3, 5, t);
      EXPECT_TRUE(reachable_all(g));
      EXPECT_TRUE(g.is_subgraph_of(base));
      EXPECT_EQ(g, generate_round_graph(base, 0.3, 5, t));
      if (!(g == generate_round_graph(base, 0.3, 6, t))) varied = true;
    }
    EXPECT_TRUE(varied);
  }
}

TEST(GenerateRoundGraph, RejectsBadInputs) {
  Digraph broken(3);
  broken.add_edge(0, 1);
  EXPECT_THROW(generate_round_graph(broken, 0.5, 1, 0), ConfigError);
  EXPECT_THROW(generate_round_graph(Digraph::complete(3), 0.0, 1, 0), ConfigError);
  EXPECT_THROW(generate_round_graph(Digraph::complete(3), 1.5, 1, 0), ConfigError);
}

TEST(MixingPair, RejectsSingleNode) {
  EXPECT_THROW(build_mixing_pair(Digraph(1)), ConfigError);
}

TEST(MixingPair, TwoNodeFullIsUniform) {
  const auto p = build_mixing_pair(Digraph::complete(2));
  EXPECT_TRUE(p.A.isApprox(Eigen::MatrixXd::Constant(2, 2, 0.5)));
  EXPECT_TRUE(p.B.isApprox(Eigen::MatrixXd::Constant(2, 2, 0.5)));
}

TEST(MixingPair, ThreeNodeRingHasTwoHalvesPerRowAndColumn) {
  const auto p = build_mixing_pair(Digraph::ring(3));
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ((p.A.row(i).array() == 0.5).count(), 2);
    EXPECT_EQ((p.B.col(i).array() == 0.5).count(), 2);
  }
  EXPECT_DOUBLE_EQ(p.A(1, 0), 0.5);  // 1 receives from 0
  EXPECT_DOUBLE_EQ(p.B(1, 0), 0.5);  // 0 pushes to 1
}

TEST(MixingPair, StochasticAndPatternOnRandomGraphs) {
  const auto plan = TopologyPlan::random(Digraph::complete(8), 0.4, 9);
  for (long t = 0; t < 100; ++t) {
    const auto& p = plan.pair(t);
    EXPECT_LE(stochasticity_defect(p), 1e-12);
    EXPECT_TRUE(pattern_matches(p));
    EXPECT_GT(p.a_min, 0.0);
    EXPECT_GT(p.b_min, 0.0);
  }
}

TEST(PiSequence, DoublyStochasticStaysUniform) {
  const auto pi = pi_sequence(TopologyPlan::fixed(Digraph::complete(5)), 20);
  for (const auto& v : pi) EXPECT_LE((v.array() - 0.2).abs().maxCoeff(), 1e-15);
}

TEST(PiSequence, HandComputedSingleRound) {
  MixingPair p;
  p.A = Eigen::MatrixXd::Identity(2, 2);
  p.B.resize(2, 2);
  p.B << 1.0, 0.5, 0.0, 0.5;
  const std::vector<MixingPair> pairs{p};
  const auto pi = pi_sequence(pairs);
  ASSERT_EQ(pi.size(), 2u);
  EXPECT_DOUBLE_EQ(pi[1][0], 0.75);
  EXPECT_DOUBLE_EQ(pi[1][1], 0.25);
}

TEST(PiSequence, StochasticWithLowerBound) {
  const int n = 6;
  const auto plan = TopologyPlan::random(Digraph::ring(n), 0.5, 4);
  const auto pi = pi_sequence(plan, 300);
  for (long t = 0; t < 300; ++t) {
    const auto& v = pi[static_cast<std::size_t>(t)];
    EXPECT_NEAR(v.sum(), 1.0, 1e-12);
    EXPECT_GE(v.minCoeff(), std::pow(plan.pair(t).b_min, n) / n);
    EXPECT_LE((pi[static_cast<std::size_t>(t) + 1] - plan.pair(t).B * v).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(PhiSequence, DoublyStochasticIsUniform) {
  const auto phi = phi_sequence(TopologyPlan::fixed(Digraph::complete(4)), 5);
  for (const auto& v : phi) EXPECT_LE((v.array() - 0.25).abs().maxCoeff(), 1e-12);
}

TEST(PhiSequence, MatchesIndependentLeftPerronVector) {
  Digraph g = Digraph::ring(3);
  g.add_edge(0, 2);
  const auto plan = TopologyPlan::fixed(g);
  const Eigen::MatrixXd A = plan.pair(0).A;
  Eigen::EigenSolver<Eigen::MatrixXd> es(A.transpose());
  int k = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(es.eigenvalues()[i] - 1.0) < std::abs(es.eigenvalues()[k] - 1.0)) k = i;
  Eigen::VectorXd v = es.eigenvectors().col(k).real();
  v /= v.sum();
  const auto est = phi_at(plan, 0, 1e-10);
  EXPECT_LE((est.phi - v).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_GT((v.array() - 1.0 / 3).abs().maxCoeff(), 1e-3) << "instance must be non-uniform";
}

TEST(PhiSequence, ConsistencyAndLowerBoundOnRandomPlan) {
  const double tol = 1e-10;
  const int n = 5;
  const auto plan = TopologyPlan::random(Digraph::bidirectional_ring(n), 0.5, 21);
  const auto phi = phi_sequence(plan, 200, tol);
  double a = 1.0;
  for (long t = 0; t <= 200; ++t) a = std::min(a, plan.pair(t).a_min);
  for (long t = 0; t < 200; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    const Eigen::VectorXd lhs = plan.pair(t).A.transpose() * phi[ti + 1];
    EXPECT_LE((lhs - phi[ti]).cwiseAbs().maxCoeff(), 10 * tol);
    EXPECT_NEAR(phi[ti].sum(), 1.0, 1e-12);
    EXPECT_GE(phi[ti].minCoeff(), std::pow(a, n) / n);
  }
  // the tail vector agrees with a direct backward-product estimate at an interior round
  const auto direct = phi_at(plan, 100, tol);
  EXPECT_LE((direct.phi - phi[100]).cwiseAbs().maxCoeff(), 10 * tol);
}

TEST(PhiSequence, WindowExhaustionCarriesDiscrepancy) {
  const auto plan = TopologyPlan::fixed(Digraph::ring(6));
  try {
    phi_at(plan, 0, 1e-12, 2);
    FAIL() << "expected a diagnostics error";
  } catch (const DiagnosticsError& e) {
    EXPECT_GT(e.achieved(), 1e-12);
  }
}

TEST(GraphStats, CompleteAndRingDiameters) {
  EXPECT_EQ(graph_stats(Digraph::complete(6)).diameter, 1);
  EXPECT_EQ(graph_stats(Digraph::ring(4)).diameter, 3);
  EXPECT_EQ(graph_stats(Digraph::complete(6)).max_edge_utility, 1);
}

TEST(GraphStats, RingUtilityMatchesExhaustiveEnumeration) {
  for (const auto& g : {Digraph::ring(4), Digraph::ring(6), Digraph::bidirectional_ring(5)}) {
    const auto [d, k] = brute_stats(g);
    const auto s = graph_stats(g);
    EXPECT_EQ(s.diameter, d);
    EXPECT_EQ(s.max_edge_utility, k);
  }
  EXPECT_EQ(graph_stats(Digraph::ring(4)).max_edge_utility, 6);
}

TEST(GraphStats, DenserGraphNeverHasLargerDiameter) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    Digraph g = Digraph::ring(7);
    Digraph h = g;
    for (int e = 0; e < 6; ++e) h.add_edge(static_cast<int>(rng.below(7)), static_cast<int>(rng.below(7)));
    EXPECT_LE(graph_stats(h).diameter, graph_stats(g).diameter);
  }
}

TEST(TopologyPlan, DeterministicAcrossInstances) {
  const auto a = TopologyPlan::random(Digraph::complete(6), 0.5, 77);
  const auto b = TopologyPlan::random(Digraph::complete(6), 0.5, 77);
  for (long t = 0; t < 50; ++t) {
    EXPECT_EQ(a.graph(t), b.graph(t));
    EXPECT_EQ(a.pair(t).A, b.pair(t).A);
  }
}

TEST(TopologyPlan, ReplayReusesLastGraph) {
  const auto plan = TopologyPlan::replay({Digraph::complete(3), Digraph::ring(3)});
  EXPECT_EQ(plan.graph(0), Digraph::complete(3));
  EXPECT_EQ(plan.graph(1), Digraph::ring(3));
  EXPECT_EQ(plan.graph(9), Digraph::ring(3));
  EXPECT_FALSE(plan.is_static());
  EXPECT_THROW(TopologyPlan::replay({}), ConfigError);
}

TEST(GraphSequenceFormat, RoundTrip) {
  const auto plan = TopologyPlan::random(Digraph::complete(5), 0.5, 3);
  std::vector<Digraph> graphs;
  for (long t = 0; t < 20; ++t) graphs.push_back(plan.graph(t));
  std::stringstream ss;
  write_graph_sequence(ss, graphs);
  const std::string text = ss.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "5 20");
  const auto back = read_graph_sequence(ss);
  ASSERT_EQ(back.size(), graphs.size());
  for (std::size_t t = 0; t < graphs.size(); ++t) EXPECT_EQ(back[t], graphs[t]);
}

TEST(GraphSequenceFormat, ErrorsCarryLineNumbers) {
  std::istringstream bad("3 2\n0: 0 1\n1 0 2\n");
  try {
    read_graph_sequence(bad);
    FAIL();
  } catch (const IngestionError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_EQ(e.exit_code(), ExitCode::ingestion);
  }
  std::istringstream range("3 2\n5: 0 1\n");
  EXPECT_THROW(read_graph_sequence(range), IngestionError);
  std::istringstream header("x\n");
  EXPECT_THROW(read_graph_sequence(header), IngestionError);
}
