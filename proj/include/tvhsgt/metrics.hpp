#ifndef TVHSGT_METRICS_HPP
#define TVHSGT_METRICS_HPP

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tvhsgt/error.hpp"
#include "tvhsgt/oracle.hpp"
#include "tvhsgt/random.hpp"

namespace tvhsgt {

/// Per-round diagnostics. Stacked agent quantities are n x p matrices.
struct RoundMetrics {
  long t = 0;
  double regret_inc = 0.0;  // f_t(x_hat_t) - f_t(x*_t)
  double regret_avg = 0.0;  // (1/t) sum_{s<=t} regret_inc
  double consensus2 = 0.0;  // ||x_t - x_hat_t||^2_{phi_t}
  double tracking2 = 0.0;   // S^2(y_t, pi_t)
  double opt2 = 0.0;        // ||x_hat_t - x*_t||^2
  double gradest2 = 0.0;    // ||z_t - grad F_t(x_t)||^2
  double q_t = std::numeric_limits<double>::quiet_NaN();
  double p_t = std::numeric_limits<double>::quiet_NaN();
  double loss = 0.0;  // f_t at the unweighted mean iterate
  double accuracy = std::numeric_limits<double>::quiet_NaN();
};

inline void check_weights(const Eigen::MatrixXd& X, const Eigen::VectorXd& w) {
  if (X.rows() != w.size()) throw DomainError("weight vector does not match the agent count");
}

/// x_hat = sum_i phi_i x_i.
inline Eigen::VectorXd weighted_average(const Eigen::MatrixXd& X, const Eigen::VectorXd& phi) {
  check_weights(X, phi);
  return X.transpose() * phi;
}

/// sum_i phi_i ||x_i - x_hat||^2.
inline double consensus_error(const Eigen::MatrixXd& X, const Eigen::VectorXd& phi) {
  const Eigen::VectorXd xhat = weighted_average(X, phi);
  return phi.dot((X.rowwise() - xhat.transpose()).rowwise().squaredNorm());
}

/// S^2(y, pi) = sum_i pi_i ||y_i / pi_i - sum_j y_j||^2.
inline double tracking_error(const Eigen::MatrixXd& Y, const Eigen::VectorXd& pi) {
  check_weights(Y, pi);
  if ((pi.array() <= 0.0).any()) throw DomainError("tracking error needs strictly positive pi");
  const Eigen::RowVectorXd total = Y.colwise().sum();
  double s = 0.0;
  for (Eigen::Index i = 0; i < Y.rows(); ++i)
    s += pi[i] * (Y.row(i) / pi[i] - total).squaredNorm();
  return s;
}

/// ||y||^2_{pi^{-1}} = sum_i ||y_i||^2 / pi_i.
inline double inverse_weighted_norm2(const Eigen::MatrixXd& Y, const Eigen::VectorXd& pi) {
  check_weights(Y, pi);
  return (Y.rowwise().squaredNorm().array() / pi.array()).sum();
}

struct RegretEntry {
  double f_hat = 0.0;                // f_t(x_hat_t)
  std::optional<double> f_opt;       // f_t(x*_t)
};

struct RegretSummary {
  double total = 0.0;                 // R_T
  std::vector<double> increments;
  std::vector<double> time_averaged;  // running sum divided by t (t = 1..T)
};

inline RegretSummary regret_accumulate(std::span<const RegretEntry> history) {
  RegretSummary out;
  double sum = 0.0;
  for (std::size_t k = 0; k < history.size(); ++k) {
    if (!history[k].f_opt)
      throw DiagnosticsError("regret: missing round optimum at round " + std::to_string(k + 1));
    const double inc = history[k].f_hat - *history[k].f_opt;
    sum += inc;
    out.increments.push_back(inc);
    out.time_averaged.push_back(sum / static_cast<double>(k + 1));
  }
  out.total = sum;
  return out;
}

/// p_t = ||x*_{t+1} - x*_t||.
inline std::vector<double> path_variation(std::span<const Eigen::VectorXd> optima) {
  std::vector<double> p;
  for (std::size_t t = 0; t + 1 < optima.size(); ++t) p.push_back((optima[t + 1] - optima[t]).norm());
  return p;
}

/// Probe set for the q_t estimator: the current iterates plus `extra` Gaussian
/// perturbations of their weighted average (unit scale plus the average's norm).
inline std::vector<Eigen::VectorXd> regularity_probes(const Eigen::MatrixXd& X,
                                                      const Eigen::VectorXd& xhat, int extra,
                                                      Rng& rng) {
  std::vector<Eigen::VectorXd> probes;
  for (Eigen::Index i = 0; i < X.rows(); ++i) probes.push_back(X.row(i).transpose());
  const double scale = 1.0 + xhat.norm();
  for (int k = 0; k < extra; ++k) {
    Eigen::VectorXd v = xhat;
    for (Eigen::Index j = 0; j < v.size(); ++j) v[j] += scale * rng.normal();
    probes.push_back(std::move(v));
  }
  return probes;
}

/// max over probes and agents of ||grad f_{i,t+1}(x) - grad f_{i,t}(x)||; a lower
/// estimate of the supremum q_t.
inline double estimate_q(const OnlineProblem& problem, long t,
                         std::span<const Eigen::VectorXd> probes) {
  if (!problem.time_varying()) return 0.0;
  double q = 0.0;
  for (const auto& x : probes)
    for (int i = 0; i < problem.agents(); ++i) {
      const auto& a = problem.agent(i);
      q = std::max(q, (a.full(x, t + 1).grad - a.full(x, t).grad).norm());
    }
  return q;
}

// ---------------------------------------------------------------------------
// CSV emission. Column order is fixed.

inline constexpr const char* kMetricsHeader =
    "t,regret_inc,regret_avg,consensus2,tracking2,opt2,gradest2,q_t,p_t,loss,accuracy";

inline void put_number(std::ostream& os, double v) {
  if (std::isnan(v)) {
    os << "nan";
    return;
  }
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  os.write(buf, p - buf);
}

inline void write_metrics_row(std::ostream& os, const RoundMetrics& m) {
  os << m.t;
  for (double v : {m.regret_inc, m.regret_avg, m.consensus2, m.tracking2, m.opt2, m.gradest2,
                   m.q_t, m.p_t, m.loss, m.accuracy}) {
    os << ',';
    put_number(os, v);
  }
  os << '\n';
}

inline void write_metrics_csv(std::ostream& os, std::span<const RoundMetrics> rows) {
  os << kMetricsHeader << '\n';
  for (const auto& m : rows) write_metrics_row(os, m);
}

}  // namespace tvhsgt

#endif  // TVHSGT_METRICS_HPP
