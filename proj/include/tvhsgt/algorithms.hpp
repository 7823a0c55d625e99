#ifndef TVHSGT_ALGORITHMS_HPP
#define TVHSGT_ALGORITHMS_HPP

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tvhsgt/error.hpp"
#include "tvhsgt/metrics.hpp"
#include "tvhsgt/network.hpp"
#include "tvhsgt/oracle.hpp"
#include "tvhsgt/random.hpp"

namespace tvhsgt {

enum class Method { tv_hsgt, dsgd, dsgt, dsgt_hb };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::tv_hsgt: return "tv_hsgt";
    case Method::dsgd: return "dsgd";
    case Method::dsgt: return "dsgt";
    case Method::dsgt_hb: return "dsgt_hb";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "tv_hsgt" || s == "tv-hsgt") return Method::tv_hsgt;
  if (s == "dsgd") return Method::dsgd;
  if (s == "dsgt") return Method::dsgt;
  if (s == "dsgt_hb" || s == "dsgt-hb") return Method::dsgt_hb;
  throw ConfigError("unknown method '" + s + "'");
}

struct AlgoConfig {
  Method method = Method::tv_hsgt;
  double alpha = 0.001;
  double beta = 0.01;
  double momentum = 0.9;  // dsgt_hb only

  void validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be positive");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  }
};

/// One agent's view of the network state.
struct AgentState {
  Eigen::VectorXd x;       // decision
  Eigen::VectorXd y;       // gradient tracker
  Eigen::VectorXd z;       // hybrid gradient (baselines: last stochastic gradient)
  Eigen::VectorXd x_prev;  // decision of the previous round
};

/// All agents' states stacked row-wise (row i belongs to agent i).
struct NetworkState {
  long t = 0;
  double regret = 0.0;  // cumulative regret through round t
  Eigen::MatrixXd x, y, z, x_prev;

  int agents() const noexcept { return static_cast<int>(x.rows()); }
  Eigen::Index dim() const noexcept { return x.cols(); }

  AgentState agent(int i) const {
    return {x.row(i).transpose(), y.row(i).transpose(), z.row(i).transpose(),
            x_prev.row(i).transpose()};
  }

  void check_finite() const {
    for (int i = 0; i < agents(); ++i)
      if (!x.row(i).allFinite() || !y.row(i).allFinite() || !z.row(i).allFinite())
        throw DivergenceError(i, t);
  }
};

/// z_0 = stochastic gradient at x_0 on the round-0 sample, y_0 = z_0.
inline NetworkState init_agents(const Eigen::MatrixXd& x0, const OnlineProblem& problem) {
  if (x0.rows() != problem.agents() || x0.cols() != problem.dim())
    throw ConfigError("initial decisions have the wrong shape");
  NetworkState s;
  s.t = 0;
  s.x = x0;
  s.x_prev = x0;
  s.z = problem.stochastic_gradients(x0, 0);
  s.y = s.z;
  s.check_finite();
  return s;
}

/// One TV-HSGT round t -> t+1:
///   x_{t+1} = A_t (x_t - alpha y_t)
///   z_{t+1} = g_{t+1}(x_{t+1}) + (1 - beta)(z_t - g_{t+1}(x_t)), both on sample xi_{t+1}
///   y_{t+1} = B_t (y_t + z_{t+1} - z_t)
inline void tvhsgt_round(NetworkState& s, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                         const OnlineProblem& problem, const AlgoConfig& cfg) {
  const long next = s.t + 1;
  Eigen::MatrixXd x_next = A * (s.x - cfg.alpha * s.y);
  Eigen::MatrixXd z_next = problem.stochastic_gradients(x_next, next);
  if (cfg.beta != 1.0)
    z_next += (1.0 - cfg.beta) * (s.z - problem.stochastic_gradients(s.x, next));
  s.y = B * (s.y + z_next - s.z);
  s.x_prev = std::move(s.x);
  s.x = std::move(x_next);
  s.z = std::move(z_next);
  s.t = next;
  s.check_finite();
}

inline void tvhsgt_round(NetworkState& s, const MixingPair& pair, const OnlineProblem& problem,
                         const AlgoConfig& cfg) {
  tvhsgt_round(s, pair.A, pair.B, problem, cfg);
}

/// Adapt-then-combine baselines over a doubly stochastic W, with g_t the
/// round-t stochastic gradient stored in z:
///   dsgd:    x_{t+1} = W (x_t - alpha g_t)
///   dsgt:    x_{t+1} = W (x_t - alpha y_t),  y_{t+1} = W (y_t + g_{t+1} - g_t)
///   dsgt_hb: dsgt plus momentum (x_t - x_{t-1}) in the decision update
inline void baseline_round(NetworkState& s, const Eigen::MatrixXd& W, const OnlineProblem& problem,
                           const AlgoConfig& cfg) {
  const long next = s.t + 1;
  Eigen::MatrixXd x_next;
  switch (cfg.method) {
    case Method::dsgd:
      x_next = W * (s.x - cfg.alpha * s.z);
      break;
    case Method::dsgt:
      x_next = W * (s.x - cfg.alpha * s.y);
      break;
    case Method::dsgt_hb:
      x_next = W * (s.x - cfg.alpha * s.y) + cfg.momentum * (s.x - s.x_prev);
      break;
    case Method::tv_hsgt:
      throw ConfigError("baseline_round called with method tv_hsgt");
  }
  Eigen::MatrixXd g_next = problem.stochastic_gradients(x_next, next);
  if (cfg.method == Method::dsgd)
    s.y = g_next;
  else
    s.y = W * (s.y + g_next - s.z);
  s.x_prev = std::move(s.x);
  s.x = std::move(x_next);
  s.z = std::move(g_next);
  s.t = next;
  s.check_finite();
}

/// Minimizers x*_0 .. x*_count-1 of the global objectives, warm-started.
inline std::vector<Eigen::VectorXd> compute_optima(const OnlineProblem& problem, long count,
                                                   double tol = 1e-10) {
  std::vector<Eigen::VectorXd> out;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(problem.dim());
  for (long t = 0; t < count; ++t) {
    if (t > 0 && !problem.time_varying()) {
      out.push_back(out.back());
      continue;
    }
    x = round_optimum(problem, t, x, tol);
    out.push_back(x);
  }
  return out;
}

/// Per-round quantities kept for the inequality monitors (index t = 0..T).
struct TraceRow {
  double consensus2 = 0.0;
  double tracking2 = 0.0;
  double opt2 = 0.0;
  double gradest2 = 0.0;
  double sum_y2 = 0.0;   // ||sum_i y_i||^2
  double y_pi2 = 0.0;    // ||y||^2_{pi^-1}
  double dx2 = 0.0;      // ||x_{t+1} - x_t||^2 (zero at t = T)
  double dz2 = 0.0;      // ||z_{t+1} - z_t||^2 (zero at t = T)
  double q = 0.0;
  double p = 0.0;
};

struct RunOptions {
  long T = 0;
  std::uint64_t seed = 0;
  std::optional<Eigen::MatrixXd> x0;  // defaults to zeros
  std::optional<NetworkState> resume; // continue from a saved state instead
  bool regularity = true;             // estimate q_t (costly) and p_t
  int q_probes = 8;
  double solver_tol = 1e-10;
  double phi_tol = 1e-10;
  bool record_trace = false;
};

struct RunResult {
  NetworkState initial;
  NetworkState final;
  std::vector<RoundMetrics> metrics;  // rounds 1..T
  std::vector<TraceRow> trace;        // rounds 0..T when requested
};

/// Network weights seen by the metrics: phi_t and pi_t for TV-HSGT, uniform
/// vectors for the baselines (their W is doubly stochastic).
struct WeightSequences {
  std::vector<Eigen::VectorXd> phi;  // 0..T+1
  std::vector<Eigen::VectorXd> pi;   // 0..T+1
};

inline WeightSequences weight_sequences(Method method, const TopologyPlan& plan, long T,
                                        double phi_tol = 1e-10) {
  WeightSequences w;
  const int n = plan.size();
  if (method != Method::tv_hsgt) {
    const Eigen::VectorXd u = Eigen::VectorXd::Constant(n, 1.0 / n);
    w.phi.assign(static_cast<std::size_t>(T + 2), u);
    w.pi = w.phi;
    return w;
  }
  w.phi = phi_sequence(plan, T + 1, phi_tol);
  w.pi = pi_sequence(plan, T + 1);
  return w;
}

/// Runs T rounds of the configured method, emitting metrics for rounds 1..T.
/// `optima`, when supplied, must hold x*_0 .. x*_{T+1}.
inline RunResult run_horizon(const AlgoConfig& cfg, const TopologyPlan& plan,
                             const OnlineProblem& problem, const RunOptions& opt,
                             const std::vector<Eigen::VectorXd>* optima = nullptr) {
  cfg.validate();
  if (opt.T < 0) throw ConfigError("T must be nonnegative");
  if (plan.size() != problem.agents()) throw ConfigError("topology and problem disagree on n");
  const int n = problem.agents();
  const Eigen::MatrixXd x0 = opt.x0 ? *opt.x0 : Eigen::MatrixXd::Zero(n, problem.dim());

  RunResult out;
  NetworkState s = opt.resume ? *opt.resume : init_agents(x0, problem);
  if (opt.resume && (s.x.rows() != n || s.x.cols() != problem.dim() || s.t < 0 || s.t > opt.T))
    throw ConfigError("snapshot does not match the problem or horizon");
  out.initial = s;
  if (opt.T == s.t) {
    out.final = s;
    return out;
  }

  std::vector<Eigen::VectorXd> own_optima;
  if (!optima) {
    own_optima = compute_optima(problem, opt.T + 2, opt.solver_tol);
    optima = &own_optima;
  }
  if (static_cast<long>(optima->size()) < opt.T + 2)
    throw ConfigError("optima must cover rounds 0..T+1");

  const WeightSequences w = weight_sequences(cfg.method, plan, opt.T, opt.phi_tol);
  const Eigen::MatrixXd W = Eigen::MatrixXd::Constant(n, n, 1.0 / n);
  Rng probe_rng(derive_seed(opt.seed, 0x70726f6265ULL));

  auto trace_row = [&](const NetworkState& st) {
    const auto t = static_cast<std::size_t>(st.t);
    TraceRow row;
    const Eigen::VectorXd xhat = weighted_average(st.x, w.phi[t]);
    row.consensus2 = consensus_error(st.x, w.phi[t]);
    row.tracking2 = tracking_error(st.y, w.pi[t]);
    row.opt2 = (xhat - (*optima)[t]).squaredNorm();
    row.gradest2 = (st.z - problem.exact_gradients(st.x, st.t)).squaredNorm();
    row.sum_y2 = st.y.colwise().sum().squaredNorm();
    row.y_pi2 = inverse_weighted_norm2(st.y, w.pi[t]);
    row.p = ((*optima)[t + 1] - (*optima)[t]).norm();
    return row;
  };
  if (opt.record_trace) out.trace.push_back(trace_row(s));

  for (long round = s.t; round < opt.T; ++round) {
    const Eigen::MatrixXd x_before = s.x, z_before = s.z;
    if (cfg.method == Method::tv_hsgt)
      tvhsgt_round(s, plan.pair(round), problem, cfg);
    else
      baseline_round(s, W, problem, cfg);

    const long t = s.t;
    const auto ti = static_cast<std::size_t>(t);
    const Eigen::VectorXd& xstar = (*optima)[ti];
    const Eigen::VectorXd xhat = weighted_average(s.x, w.phi[ti]);
    RoundMetrics m;
    m.t = t;
    m.regret_inc = problem.global(xhat, t).value - problem.global(xstar, t).value;
    s.regret += m.regret_inc;
    m.regret_avg = s.regret / static_cast<double>(t);
    m.consensus2 = consensus_error(s.x, w.phi[ti]);
    m.tracking2 = tracking_error(s.y, w.pi[ti]);
    m.opt2 = (xhat - xstar).squaredNorm();
    m.gradest2 = (s.z - problem.exact_gradients(s.x, t)).squaredNorm();
    if (opt.regularity) {
      m.p_t = ((*optima)[ti + 1] - xstar).norm();
      const auto probes = regularity_probes(s.x, xhat, opt.q_probes, probe_rng);
      m.q_t = estimate_q(problem, t, probes);
    }
    const Eigen::VectorXd xbar = s.x.colwise().mean().transpose();
    m.loss = problem.global(xbar, t).value;
    m.accuracy = problem.accuracy(xbar, t);
    out.metrics.push_back(m);

    if (opt.record_trace) {
      auto& prev = out.trace.back();
      prev.dx2 = (s.x - x_before).squaredNorm();
      prev.dz2 = (s.z - z_before).squaredNorm();
      // drift from round t-1 to t, probed at both iterates
      if (problem.time_varying()) {
        auto probes = regularity_probes(x_before, weighted_average(x_before, w.phi[ti - 1]),
                                        opt.q_probes, probe_rng);
        for (Eigen::Index i = 0; i < s.x.rows(); ++i) probes.push_back(s.x.row(i).transpose());
        prev.q = estimate_q(problem, t - 1, probes);
      }
      out.trace.push_back(trace_row(s));
    }
  }
  out.final = std::move(s);
  return out;
}

// ---------------------------------------------------------------------------
// Flat binary snapshot: "TVHSGTSN", u32 version, i64 t, i64 n, i64 p, f64 regret,
// then x, y, z, x_prev as row-major little-endian doubles.

inline constexpr std::uint32_t kSnapshotVersion = 1;

inline void save_snapshot(std::ostream& os, const NetworkState& s) {
  static_assert(std::endian::native == std::endian::little, "snapshot assumes little-endian host");
  os.write("TVHSGTSN", 8);
  const std::uint32_t version = kSnapshotVersion;
  const std::int64_t hdr[3] = {s.t, s.x.rows(), s.x.cols()};
  os.write(reinterpret_cast<const char*>(&version), sizeof version);
  os.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
  os.write(reinterpret_cast<const char*>(&s.regret), sizeof s.regret);
  for (const Eigen::MatrixXd* m : {&s.x, &s.y, &s.z, &s.x_prev}) {
    const RowMatrix rm = *m;
    os.write(reinterpret_cast<const char*>(rm.data()),
             static_cast<std::streamsize>(rm.size() * sizeof(double)));
  }
}

inline NetworkState load_snapshot(std::istream& is) {
  char magic[8];
  std::uint32_t version = 0;
  std::int64_t hdr[3];
  if (!is.read(magic, 8) || std::memcmp(magic, "TVHSGTSN", 8) != 0)
    throw IngestionError("snapshot: bad magic");
  if (!is.read(reinterpret_cast<char*>(&version), sizeof version) || version != kSnapshotVersion)
    throw IngestionError("snapshot: unsupported version");
  if (!is.read(reinterpret_cast<char*>(hdr), sizeof hdr) || hdr[1] < 1 || hdr[2] < 1)
    throw IngestionError("snapshot: bad header");
  NetworkState s;
  s.t = hdr[0];
  if (!is.read(reinterpret_cast<char*>(&s.regret), sizeof s.regret))
    throw IngestionError("snapshot: bad header");
  for (Eigen::MatrixXd* m : {&s.x, &s.y, &s.z, &s.x_prev}) {
    RowMatrix rm(hdr[1], hdr[2]);
    if (!is.read(reinterpret_cast<char*>(rm.data()),
                 static_cast<std::streamsize>(rm.size() * sizeof(double))))
      throw IngestionError("snapshot: truncated payload");
    *m = rm;
  }
  return s;
}

}  // namespace tvhsgt

#endif  // TVHSGT_ALGORITHMS_HPP
