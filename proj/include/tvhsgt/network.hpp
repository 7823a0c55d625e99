#ifndef TVHSGT_NETWORK_HPP
#define TVHSGT_NETWORK_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <deque>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tvhsgt/error.hpp"
#include "tvhsgt/random.hpp"

namespace tvhsgt {

/// Directed communication graph on nodes 0..n-1. An edge (from -> to) means
/// `to` receives from `from`. Every node carries an implicit self-loop.
class Digraph {
 public:
  explicit Digraph(int n) : n_(n), adj_(static_cast<std::size_t>(n) * n, 0) {
    if (n < 1) throw ConfigError("digraph needs at least one node");
    for (int i = 0; i < n; ++i) adj_[idx(i, i)] = 1;
  }

  static Digraph complete(int n) {
    Digraph g(n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) g.add_edge(i, j);
    return g;
  }

  /// Directed ring 0 -> 1 -> ... -> n-1 -> 0.
  static Digraph ring(int n) {
    Digraph g(n);
    for (int i = 0; i < n; ++i) g.add_edge(i, (i + 1) % n);
    return g;
  }

  static Digraph bidirectional_ring(int n) {
    Digraph g(n);
    for (int i = 0; i < n; ++i) {
      g.add_edge(i, (i + 1) % n);
      g.add_edge((i + 1) % n, i);
    }
    return g;
  }

  int size() const noexcept { return n_; }

  void add_edge(int from, int to) {
    check(from);
    check(to);
    adj_[idx(from, to)] = 1;
  }

  bool has_edge(int from, int to) const { return adj_[idx(from, to)] != 0; }

  /// Nodes j != i with an edge j -> i, ascending.
  std::vector<int> in_neighbors(int i) const {
    std::vector<int> out;
    for (int j = 0; j < n_; ++j)
      if (j != i && has_edge(j, i)) out.push_back(j);
    return out;
  }

  /// Nodes j != i with an edge i -> j, ascending.
  std::vector<int> out_neighbors(int i) const {
    std::vector<int> out;
    for (int j = 0; j < n_; ++j)
      if (j != i && has_edge(i, j)) out.push_back(j);
    return out;
  }

  /// Non-self-loop edges as (from, to) pairs in lexicographic order.
  std::vector<std::pair<int, int>> edges() const {
    std::vector<std::pair<int, int>> out;
    for (int j = 0; j < n_; ++j)
      for (int i = 0; i < n_; ++i)
        if (i != j && has_edge(j, i)) out.emplace_back(j, i);
    return out;
  }

  bool is_subgraph_of(const Digraph& other) const {
    if (other.n_ != n_) return false;
    for (std::size_t k = 0; k < adj_.size(); ++k)
      if (adj_[k] && !other.adj_[k]) return false;
    return true;
  }

  friend bool operator==(const Digraph& a, const Digraph& b) {
    return a.n_ == b.n_ && a.adj_ == b.adj_;
  }

 private:
  std::size_t idx(int from, int to) const {
    return static_cast<std::size_t>(from) * static_cast<std::size_t>(n_) +
           static_cast<std::size_t>(to);
  }
  void check(int v) const {
    if (v < 0 || v >= n_) throw ConfigError("node index " + std::to_string(v) + " out of range");
  }

  int n_;
  std::vector<std::uint8_t> adj_;
};

namespace detail {

// BFS from s following out-edges, neighbors scanned in ascending index order.
// parent[v] is the node that first discovered v (lowest-index tie-break).
inline void bfs(const Digraph& g, int s, std::vector<int>& dist, std::vector<int>& parent) {
  const int n = g.size();
  dist.assign(static_cast<std::size_t>(n), -1);
  parent.assign(static_cast<std::size_t>(n), -1);
  std::deque<int> queue{s};
  dist[static_cast<std::size_t>(s)] = 0;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (int v = 0; v < n; ++v) {
      if (v == u || !g.has_edge(u, v) || dist[static_cast<std::size_t>(v)] >= 0) continue;
      dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
      parent[static_cast<std::size_t>(v)] = u;
      queue.push_back(v);
    }
  }
}

}  // namespace detail

inline bool is_strongly_connected(const Digraph& g) {
  std::vector<int> dist, parent;
  for (int s = 0; s < g.size(); ++s) {
    detail::bfs(g, s, dist, parent);
    if (std::any_of(dist.begin(), dist.end(), [](int d) { return d < 0; })) return false;
  }
  return true;
}

struct GraphStats {
  int diameter = 0;
  /// Maximum over edges of the number of ordered node pairs whose canonical
  /// BFS shortest path (lowest-index tie-break) traverses the edge.
  int max_edge_utility = 0;
};

inline GraphStats graph_stats(const Digraph& g) {
  const int n = g.size();
  GraphStats stats;
  std::vector<int> use(static_cast<std::size_t>(n) * n, 0);
  std::vector<int> dist, parent;
  for (int s = 0; s < n; ++s) {
    detail::bfs(g, s, dist, parent);
    for (int t = 0; t < n; ++t) {
      if (t == s) continue;
      const int d = dist[static_cast<std::size_t>(t)];
      if (d < 0) throw ConfigError("graph_stats requires a strongly connected graph");
      stats.diameter = std::max(stats.diameter, d);
      for (int v = t; v != s; v = parent[static_cast<std::size_t>(v)]) {
        const int u = parent[static_cast<std::size_t>(v)];
        ++use[static_cast<std::size_t>(u) * n + static_cast<std::size_t>(v)];
      }
    }
  }
  stats.max_edge_utility = *std::max_element(use.begin(), use.end());
  return stats;
}

/// Samples the round-t communication graph from `base`. Each non-self-loop edge
/// survives independently with probability keep_prob. When the sample is not
/// strongly connected, a random Hamiltonian cycle drawn from the same stream is
/// unioned in; for a non-complete base each cycle hop is realized by the base
/// graph's canonical shortest path, so the result stays inside the base.
inline Digraph generate_round_graph(const Digraph& base, double keep_prob, std::uint64_t seed,
                                    long t) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0))
    throw ConfigError("keep_prob must lie in (0, 1]");
  if (!is_strongly_connected(base)) throw ConfigError("base graph is not strongly connected");
  if (keep_prob == 1.0) return base;

  const int n = base.size();
  Rng rng(derive_seed(seed, 0x67726170ULL, static_cast<std::uint64_t>(t)));
  Digraph g(n);
  for (const auto& [from, to] : base.edges())
    if (rng.bernoulli(keep_prob)) g.add_edge(from, to);
  if (is_strongly_connected(g)) return g;

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  std::vector<int> dist, parent;
  for (int k = 0; k < n; ++k) {
    const int u = order[static_cast<std::size_t>(k)];
    const int v = order[static_cast<std::size_t>((k + 1) % n)];
    if (base.has_edge(u, v)) {
      g.add_edge(u, v);
      continue;
    }
    detail::bfs(base, u, dist, parent);
    for (int w = v; w != u; w = parent[static_cast<std::size_t>(w)])
      g.add_edge(parent[static_cast<std::size_t>(w)], w);
  }
  return g;
}

/// A round's graph together with its row-stochastic A (decision mixing) and
/// column-stochastic B (tracker mixing).
struct MixingPair {
  long t = 0;
  Digraph graph{1};
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  double a_min = 0.0;
  double b_min = 0.0;
};

inline double min_positive(const Eigen::MatrixXd& m) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    const double v = m.data()[k];
    if (v > 0.0) best = std::min(best, v);
  }
  return best;
}

/// Uniform weights: [A]_ij = 1/(|N_in(i)|+1) on in-neighbors and self,
/// [B]_ji = 1/(|N_out(i)|+1) on out-neighbors and self.
inline MixingPair build_mixing_pair(const Digraph& g, long t = 0) {
  const int n = g.size();
  if (n < 2) throw ConfigError("mixing pair requires n >= 2");
  MixingPair p;
  p.t = t;
  p.graph = g;
  p.A = Eigen::MatrixXd::Zero(n, n);
  p.B = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const auto in = g.in_neighbors(i);
    const double wa = 1.0 / static_cast<double>(in.size() + 1);
    p.A(i, i) = wa;
    for (int j : in) p.A(i, j) = wa;
    const auto out = g.out_neighbors(i);
    const double wb = 1.0 / static_cast<double>(out.size() + 1);
    p.B(i, i) = wb;
    for (int j : out) p.B(j, i) = wb;
  }
  p.a_min = min_positive(p.A);
  p.b_min = min_positive(p.B);
  return p;
}

/// Largest deviation from row-stochasticity of A and column-stochasticity of B.
inline double stochasticity_defect(const MixingPair& p) {
  const double rows = (p.A.rowwise().sum().array() - 1.0).abs().maxCoeff();
  const double cols = (p.B.colwise().sum().array() - 1.0).abs().maxCoeff();
  return std::max(rows, cols);
}

/// True when A's pattern equals the in-neighbor structure and B's the
/// out-neighbor structure (including self-loops).
inline bool pattern_matches(const MixingPair& p) {
  const int n = p.graph.size();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const bool e = p.graph.has_edge(j, i);  // j -> i
      if ((p.A(i, j) > 0.0) != e) return false;
      if ((p.B(i, j) > 0.0) != e) return false;  // [B]_ij > 0 iff i is an out-neighbor of j
    }
  return true;
}

/// Source of the per-round mixing pairs for a run. Rounds are generated on
/// demand and cached; generation of round t depends only on (seed, t).
class TopologyPlan {
 public:
  enum class Kind { fixed, random, replay };

  static TopologyPlan fixed(const Digraph& g) {
    TopologyPlan plan(Kind::fixed, g, 1.0, 0);
    return plan;
  }

  static TopologyPlan random(const Digraph& base, double keep_prob, std::uint64_t seed) {
    if (!(keep_prob > 0.0 && keep_prob <= 1.0))
      throw ConfigError("keep_prob must lie in (0, 1]");
    if (!is_strongly_connected(base)) throw ConfigError("base graph is not strongly connected");
    return TopologyPlan(Kind::random, base, keep_prob, seed);
  }

  /// Replays an explicit sequence; rounds past its end reuse the last graph.
  static TopologyPlan replay(std::vector<Digraph> graphs) {
    if (graphs.empty()) throw ConfigError("replay sequence is empty");
    for (const auto& g : graphs)
      if (!is_strongly_connected(g))
        throw ConfigError("replayed graph is not strongly connected");
    TopologyPlan plan(Kind::replay, graphs.front(), 1.0, 0);
    plan.replay_ = std::move(graphs);
    return plan;
  }

  Kind kind() const noexcept { return kind_; }
  int size() const noexcept { return base_.size(); }
  bool is_static() const noexcept {
    return kind_ == Kind::fixed || (kind_ == Kind::random && keep_prob_ == 1.0) ||
           (kind_ == Kind::replay && replay_.size() == 1);
  }

  Digraph graph(long t) const {
    switch (kind_) {
      case Kind::fixed:
        return base_;
      case Kind::random:
        return generate_round_graph(base_, keep_prob_, seed_, t);
      case Kind::replay:
        return replay_[static_cast<std::size_t>(
            std::min<long>(t, static_cast<long>(replay_.size()) - 1))];
    }
    return base_;
  }

  const MixingPair& pair(long t) const {
    if (t < 0) throw ConfigError("negative round index");
    const long key = is_static() ? 0 : t;
    auto it = cache_->find(key);
    if (it == cache_->end()) it = cache_->emplace(key, build_mixing_pair(graph(t), key)).first;
    return it->second;
  }

 private:
  TopologyPlan(Kind kind, Digraph base, double keep_prob, std::uint64_t seed)
      : kind_(kind),
        base_(std::move(base)),
        keep_prob_(keep_prob),
        seed_(seed),
        cache_(std::make_shared<std::map<long, MixingPair>>()) {}

  Kind kind_;
  Digraph base_;
  double keep_prob_;
  std::uint64_t seed_;
  std::vector<Digraph> replay_;
  std::shared_ptr<std::map<long, MixingPair>> cache_;
};

/// pi_0 = 1/n, pi_{t+1} = B_t pi_t. Returns pi_0 .. pi_K for K = pairs.size().
inline std::vector<Eigen::VectorXd> pi_sequence(std::span<const MixingPair> pairs) {
  if (pairs.empty()) throw ConfigError("pi_sequence needs at least one mixing pair");
  const Eigen::Index n = pairs.front().A.rows();
  std::vector<Eigen::VectorXd> pi;
  pi.reserve(pairs.size() + 1);
  pi.push_back(Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n)));
  for (const auto& p : pairs) pi.push_back(p.B * pi.back());
  return pi;
}

inline std::vector<Eigen::VectorXd> pi_sequence(const TopologyPlan& plan, long horizon) {
  std::vector<MixingPair> pairs;
  pairs.reserve(static_cast<std::size_t>(horizon));
  for (long t = 0; t < horizon; ++t) pairs.push_back(plan.pair(t));
  if (pairs.empty()) {
    const auto n = plan.size();
    return {Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n))};
  }
  return pi_sequence(pairs);
}

struct PhiEstimate {
  Eigen::VectorXd phi;
  int window = 0;
  double discrepancy = 0.0;
};

/// phi_t as the common row of the backward product A_{t+W-1} ... A_t, growing W
/// until the largest pairwise row difference (infinity norm) is below tol.
inline PhiEstimate phi_at(const TopologyPlan& plan, long t, double tol = 1e-10,
                          int max_window = 100000) {
  if (!(tol > 0.0)) throw ConfigError("phi tolerance must be positive");
  Eigen::MatrixXd prod = plan.pair(t).A;
  double spread = std::numeric_limits<double>::infinity();
  for (int w = 1; w <= max_window; ++w) {
    if (w > 1) prod = plan.pair(t + w - 1).A * prod;
    spread = (prod.colwise().maxCoeff() - prod.colwise().minCoeff()).maxCoeff();
    if (spread < tol) {
      Eigen::VectorXd phi = prod.colwise().mean().transpose();
      phi /= phi.sum();
      return {std::move(phi), w, spread};
    }
  }
  throw DiagnosticsError("phi backward product did not converge within the window", spread);
}

/// phi_0 .. phi_horizon. The last vector comes from phi_at; earlier ones follow
/// phi_t^T = phi_{t+1}^T A_t, which only shrinks the backward-product error.
inline std::vector<Eigen::VectorXd> phi_sequence(const TopologyPlan& plan, long horizon,
                                                 double tol = 1e-10, int max_window = 100000) {
  std::vector<Eigen::VectorXd> phi(static_cast<std::size_t>(horizon + 1));
  if (plan.is_static()) {
    const auto est = phi_at(plan, 0, tol, max_window);
    std::fill(phi.begin(), phi.end(), est.phi);
    return phi;
  }
  phi.back() = phi_at(plan, horizon, tol, max_window).phi;
  for (long t = horizon - 1; t >= 0; --t) {
    Eigen::VectorXd v = plan.pair(t).A.transpose() * phi[static_cast<std::size_t>(t + 1)];
    v /= v.sum();
    phi[static_cast<std::size_t>(t)] = std::move(v);
  }
  return phi;
}

/// Writes the line-oriented topology format: header "n T", then one "t: j i"
/// line per non-self-loop edge j -> i of round t (0-based node ids).
inline void write_graph_sequence(std::ostream& os, std::span<const Digraph> graphs) {
  if (graphs.empty()) throw ConfigError("cannot write an empty graph sequence");
  os << graphs.front().size() << ' ' << graphs.size() << '\n';
  for (std::size_t t = 0; t < graphs.size(); ++t)
    for (const auto& [j, i] : graphs[t].edges()) os << t << ": " << j << ' ' << i << '\n';
}

inline std::vector<Digraph> read_graph_sequence(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() -> bool {
    while (std::getline(is, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  };
  if (!next()) throw IngestionError("graph sequence: missing header");
  long n = 0, rounds = 0;
  {
    std::istringstream hs(line);
    if (!(hs >> n >> rounds) || n < 2 || rounds < 1)
      throw IngestionError("graph sequence: bad header, expected \"n T\"", lineno);
  }
  std::vector<Digraph> graphs(static_cast<std::size_t>(rounds), Digraph(static_cast<int>(n)));
  while (next()) {
    long t = 0, j = 0, i = 0;
    char colon = 0;
    std::istringstream ls(line);
    if (!(ls >> t >> colon >> j >> i) || colon != ':')
      throw IngestionError("graph sequence: expected \"t: j i\"", lineno);
    if (t < 0 || t >= rounds || j < 0 || j >= n || i < 0 || i >= n)
      throw IngestionError("graph sequence: index out of range", lineno);
    graphs[static_cast<std::size_t>(t)].add_edge(static_cast<int>(j), static_cast<int>(i));
  }
  return graphs;
}

}  // namespace tvhsgt

#endif  // TVHSGT_NETWORK_HPP
