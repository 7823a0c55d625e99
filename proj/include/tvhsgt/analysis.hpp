#ifndef TVHSGT_ANALYSIS_HPP
#define TVHSGT_ANALYSIS_HPP

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tvhsgt/algorithms.hpp"
#include "tvhsgt/error.hpp"
#include "tvhsgt/network.hpp"

namespace tvhsgt {

/// Raw per-round contraction quantities.
struct RoundContraction {
  long t = 0;
  double c = 0.0, tau = 0.0;
  double gamma = 0.0;        // sqrt(max_i phi_i pi_i)
  double kappa = 0.0;        // sqrt(1 / min pi_t)
  double psi = 0.0;          // kappa^2
  double varphi = 0.0;       // sqrt(1 / min phi_t)
  double varphi_next = 0.0;  // sqrt(1 / min phi_{t+1})
  double eta = 0.0;          // phi_t' pi_t
  int diameter = 0;
  int utility = 0;
};

struct ContractionParams {
  double c = 0.0, tau = 0.0, eta = 0.0;
  double psi = 0.0, kappa = 0.0, varphi = 0.0, gamma = 0.0;
  double a = 0.0, b = 0.0;  // smallest positive weights over the horizon
  std::vector<RoundContraction> rounds;
};

/// Evaluates the per-round contraction quantities for rounds 0..horizon-1 and
/// their uniform bounds. phi and pi must cover indices 0..horizon.
inline ContractionParams measure_contraction(const TopologyPlan& plan, long horizon,
                                             std::span<const Eigen::VectorXd> phi,
                                             std::span<const Eigen::VectorXd> pi) {
  if (horizon < 1) throw ConfigError("contraction needs at least one round");
  if (static_cast<long>(phi.size()) < horizon + 1 || static_cast<long>(pi.size()) < horizon + 1)
    throw ConfigError("phi/pi sequences do not cover the horizon");
  ContractionParams p;
  p.a = p.b = std::numeric_limits<double>::infinity();
  for (long t = 0; t < horizon; ++t) {
    p.a = std::min(p.a, plan.pair(t).a_min);
    p.b = std::min(p.b, plan.pair(t).b_min);
    if (plan.is_static()) break;
  }
  std::optional<GraphStats> static_stats;
  p.eta = std::numeric_limits<double>::infinity();
  for (long t = 0; t < horizon; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    const Eigen::VectorXd& f0 = phi[ti];
    const Eigen::VectorXd& f1 = phi[ti + 1];
    const Eigen::VectorXd& p0 = pi[ti];
    const Eigen::VectorXd& p1 = pi[ti + 1];
    GraphStats gs;
    if (plan.is_static()) {
      if (!static_stats) static_stats = graph_stats(plan.graph(0));
      gs = *static_stats;
    } else {
      gs = graph_stats(plan.graph(t));
    }
    const double dk = static_cast<double>(gs.diameter) * gs.max_edge_utility;
    RoundContraction r;
    r.t = t;
    r.diameter = gs.diameter;
    r.utility = gs.max_edge_utility;
    const double fmax = f0.maxCoeff();
    r.c = std::sqrt(1.0 - f1.minCoeff() * p.a * p.a / (fmax * fmax * dk));
    const double pmin = p0.minCoeff(), pmax = p0.maxCoeff();
    r.tau = std::sqrt(1.0 - pmin * pmin * p.b * p.b / (pmax * pmax * p1.maxCoeff() * dk));
    r.gamma = std::sqrt(f0.cwiseProduct(p0).maxCoeff());
    r.kappa = std::sqrt(1.0 / pmin);
    r.psi = r.kappa * r.kappa;
    r.varphi = std::sqrt(1.0 / f0.minCoeff());
    r.varphi_next = std::sqrt(1.0 / f1.minCoeff());
    r.eta = f0.dot(p0);
    if (!(r.c > 0.0 && r.c < 1.0) || !(r.tau > 0.0 && r.tau < 1.0))
      throw CertificateError("contraction factor outside (0,1) at round " + std::to_string(t));
    p.c = std::max(p.c, r.c);
    p.tau = std::max(p.tau, r.tau);
    p.gamma = std::max(p.gamma, r.gamma);
    p.kappa = std::max(p.kappa, r.kappa);
    p.psi = std::max(p.psi, r.psi);
    p.varphi = std::max({p.varphi, r.varphi, r.varphi_next});
    p.eta = std::min(p.eta, r.eta);
    p.rounds.push_back(r);
  }
  return p;
}

inline ContractionParams measure_contraction(const TopologyPlan& plan, long horizon,
                                             double phi_tol = 1e-10) {
  const auto phi = phi_sequence(plan, horizon, phi_tol);
  const auto pi = pi_sequence(plan, horizon);
  return measure_contraction(plan, horizon, phi, pi);
}

struct SpectralRadius {
  double value = 0.0;
  int iterations = 0;
};

/// Perron root of a nonnegative matrix. The iterate is pushed through
/// normalized powers M^(2^k) with k growing each step, so even eigenvalue gaps
/// near machine precision separate; convergence is judged by the
/// Collatz-Wielandt bracket of M itself, whose upper end bounds rho.
inline SpectralRadius spectral_radius_power(const Eigen::Matrix4d& M, double tol = 1e-10,
                                            int max_iter = 10000) {
  if ((M.array() < 0.0).any()) throw DomainError("power iteration expects a nonnegative matrix");
  if (M.maxCoeff() == 0.0) return {0.0, 0};
  constexpr int kMaxSquarings = 60;
  Eigen::Matrix4d P = M / M.maxCoeff();
  Eigen::Vector4d x = Eigen::Vector4d::Ones();
  double lo = 0.0, hi = 0.0;
  // once within tol, keep going while the bracket still shrinks; radii a few ulp
  // below one need the extra digits
  double best_lo = 0.0, best_hi = std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (int it = 1; it <= max_iter; ++it) {
    const Eigen::Vector4d y = M * x;
    const double scale = x.maxCoeff();
    lo = std::numeric_limits<double>::infinity();
    hi = 0.0;
    for (int i = 0; i < 4; ++i) {
      if (x[i] <= 1e-300 * scale) continue;
      lo = std::min(lo, y[i] / x[i]);
      hi = std::max(hi, y[i] / x[i]);
    }
    if (hi == 0.0) return {0.0, it};
    if (hi - lo < best_hi - best_lo) {
      best_lo = lo;
      best_hi = hi;
      stalled = 0;
    } else {
      ++stalled;
    }
    if (best_hi - best_lo <= tol * best_hi && (best_hi == best_lo || stalled >= 4))
      return {std::min(0.5 * (best_lo + best_hi), best_hi), it};
    const Eigen::Vector4d next = P * x;
    if (next.maxCoeff() <= 0.0) return {0.0, it};  // nilpotent part swallowed the iterate
    x = next / next.maxCoeff();
    if (it <= kMaxSquarings) {
      P = (P * P).eval();
      if (P.maxCoeff() > 0.0) P /= P.maxCoeff();
    }
  }
  if (best_hi - best_lo <= tol * best_hi) return {std::min(0.5 * (best_lo + best_hi), best_hi), max_iter};
  throw AnalysisError("power iteration did not converge", hi - lo);
}

/// Coefficients c0..c3 of det(lambda I - M) = lambda^4 + c3 lambda^3 + ... + c0.
inline std::array<double, 4> characteristic_polynomial(const Eigen::Matrix4d& M) {
  // Faddeev-LeVerrier
  std::array<double, 5> c{};
  c[4] = 1.0;
  Eigen::Matrix4d Mk = Eigen::Matrix4d::Zero();
  for (int k = 1; k <= 4; ++k) {
    Mk = M * Mk + c[5 - k] * Eigen::Matrix4d::Identity();
    c[4 - k] = -(M * Mk).trace() / k;
  }
  return {c[0], c[1], c[2], c[3]};
}

/// Largest root modulus of the characteristic quartic via its companion matrix,
/// with a long-double Newton polish when the dominant root is real.
inline double spectral_radius_companion(const Eigen::Matrix4d& M) {
  const auto c = characteristic_polynomial(M);
  Eigen::Matrix4d C = Eigen::Matrix4d::Zero();
  for (int i = 1; i < 4; ++i) C(i, i - 1) = 1.0;
  for (int i = 0; i < 4; ++i) C(i, 3) = -c[static_cast<std::size_t>(i)];
  Eigen::EigenSolver<Eigen::Matrix4d> es(C, false);
  std::complex<double> best = 0.0;
  for (int i = 0; i < 4; ++i)
    if (std::abs(es.eigenvalues()[i]) > std::abs(best)) best = es.eigenvalues()[i];
  if (std::abs(best.imag()) > 1e-6 * std::max(1.0, std::abs(best))) return std::abs(best);
  long double x = best.real();
  for (int it = 0; it < 8; ++it) {
    long double p = 1.0L, dp = 0.0L;
    for (int k = 3; k >= 0; --k) {
      dp = dp * x + p;
      p = p * x + static_cast<long double>(c[static_cast<std::size_t>(k)]);
    }
    if (dp == 0.0L) break;
    const long double step = p / dp;
    x -= step;
    if (std::fabs(static_cast<double>(step)) < 1e-18) break;
  }
  return std::fabs(static_cast<double>(x));
}

struct StabilityCertificate {
  int n = 0;
  double mu = 0.0, L = 0.0, beta = 0.0, zeta0 = 0.0;
  double alpha = 0.0;
  ContractionParams params;
  std::array<double, 17> m{};  // m[0] .. m[16]
  Eigen::Matrix4d M = Eigen::Matrix4d::Zero();
  Eigen::Vector4d delta = Eigen::Vector4d::Zero();
  std::array<double, 4> bounds{};  // B1, B2, B3, gradient-descent bound
  double rho = std::numeric_limits<double>::quiet_NaN();
  double rho_companion = std::numeric_limits<double>::quiet_NaN();
  int power_iterations = 0;
  std::optional<Eigen::Vector4d> steady_state;

  double zeta() const noexcept { return m[4]; }
  double nu() const noexcept { return m[5]; }
  Eigen::Vector4d M_delta() const { return M * delta; }
};

inline double default_zeta0(double beta) {
  return std::min(0.5 * (1.0 / ((1.0 - beta) * (1.0 - beta)) - 1.0), 1.0);
}

inline void check_zeta0(double beta, double zeta0) {
  const double upper = 1.0 / ((1.0 - beta) * (1.0 - beta)) - 1.0;
  if (!(zeta0 > 0.0 && zeta0 < upper))
    throw ConfigError("zeta0 must lie in (0, 1/(1-beta)^2 - 1) = (0, " + std::to_string(upper) +
                      ")");
}

/// Coupling matrix of the four error quantities (consensus, tracking,
/// optimality, gradient estimation) and its sixteen constants.
inline StabilityCertificate build_M(double alpha, double beta, const ContractionParams& p, int n,
                                    double mu, double L, double zeta0) {
  if (!(p.c > 0.0 && p.c < 1.0) || !(p.tau > 0.0 && p.tau < 1.0))
    throw CertificateError("contraction bounds must lie in (0,1)");
  // mu and L are measured, not configured: a flat objective cannot be certified
  if (!(mu > 0.0) || !(L >= mu)) throw CertificateError("need 0 < mu <= L, got mu = " + std::to_string(mu));
  if (n < 1) throw ConfigError("n must be positive");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be nonnegative");
  StabilityCertificate s;
  s.n = n;
  s.mu = mu;
  s.L = L;
  s.beta = beta;
  s.zeta0 = zeta0;
  s.alpha = alpha;
  s.params = p;
  const double c = p.c, c2 = c * c, tau = p.tau, phi = p.varphi, psi = p.psi;
  const double L2 = L * L, ob2 = (1.0 - beta) * (1.0 - beta), dn = n;
  auto& m = s.m;
  const double zeta = 24.0 * L2 * phi * phi * tau * tau * psi / (1.0 - tau);
  const double nu = 6.0 * L2 * (c * phi + 1.0) * (c * phi + 1.0) * tau * tau * psi / (1.0 - tau);
  m[0] = ob2 * (1.0 + zeta0);
  m[1] = 2.0 * dn * L2 * phi * phi * c2 * (1.0 + c2) / (1.0 - c2);
  m[2] = (1.0 + c2) * c2 / (1.0 - c2);
  m[3] = 2.0 * (1.0 + c2) * c2 * dn / (1.0 - c2);
  m[4] = zeta;
  m[5] = nu;
  m[6] = 2.0 * dn * L2 * nu;
  m[7] = 3.0 * psi * beta * beta * tau * tau / (1.0 - tau);
  m[8] = 2.0 * dn * nu;
  m[9] = 4.0 * L2 * phi * phi / mu;
  m[10] = 4.0 / (mu * dn * p.eta);
  m[11] = mu * dn;
  m[12] = 4.0 / mu;
  m[13] = 24.0 * ob2 * L2 * (c * phi + 1.0) * (c * phi + 1.0);
  m[14] = 24.0 * ob2 * L2 * phi * phi * (1.0 + c) * (1.0 + c);
  m[15] = 2.0 * dn * L2 * phi * phi * m[13];
  m[16] = 2.0 * dn * m[13];
  const double a = alpha, a2 = alpha * alpha;
  s.M << (1.0 + c2) / 2.0 + a2 * m[1], a2 * m[2], a2 * m[1], a2 * m[3],
      m[4] + a2 * m[6], tau + a2 * m[5], a2 * m[6], m[7] + a2 * m[8],
      a * m[9], a * m[10], 1.0 - a * m[11], a * m[12],
      m[14] + a2 * m[15], a2 * m[13], a2 * m[15], m[0] + a2 * m[16];
  return s;
}

/// Computes the feasible delta vector, step-size bounds and certified alpha
/// (safety factor times the smallest bound), then verifies the contraction.
inline StabilityCertificate certify_step_size(const ContractionParams& p, int n, double mu,
                                              double L, double beta,
                                              std::optional<double> zeta0 = std::nullopt,
                                              double safety = 0.9) {
  if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("certificate requires 0 < beta < 1");
  const double z0 = zeta0.value_or(default_zeta0(beta));
  check_zeta0(beta, z0);
  if (!(safety > 0.0 && safety < 1.0)) throw ConfigError("safety factor must lie in (0,1)");
  StabilityCertificate s = build_M(0.0, beta, p, n, mu, L, z0);
  const auto& m = s.m;
  Eigen::Vector4d d;
  d[0] = 1.0;
  d[3] = 2.0 * m[14] / (1.0 - m[0]);
  d[1] = (2.0 / (1.0 - p.tau)) * (m[4] + 2.0 * m[7] * m[14] / (1.0 - m[0]));
  d[2] = (2.0 / m[11]) * (m[9] + m[10] * d[1] + m[12] * d[3]);
  const double c2 = p.c * p.c;
  s.bounds[0] = std::sqrt((1.0 - c2) * d[0] /
                          (2.0 * (m[1] * d[0] + m[2] * d[1] + m[1] * d[2] + m[3] * d[3])));
  s.bounds[1] = std::sqrt((m[4] * d[0] + m[7] * d[3]) /
                          (m[6] * d[0] + m[5] * d[1] + m[6] * d[2] + m[8] * d[3]));
  s.bounds[2] = std::sqrt(m[14] * d[0] /
                          (m[15] * d[0] + m[13] * d[1] + m[15] * d[2] + m[16] * d[3]));
  s.bounds[3] = 2.0 / (n * (mu + L) * p.eta);
  const double alpha = safety * *std::min_element(s.bounds.begin(), s.bounds.end());

  StabilityCertificate out = build_M(alpha, beta, p, n, mu, L, z0);
  out.delta = d;
  out.bounds = s.bounds;
  const auto power = spectral_radius_power(out.M);
  // M delta / delta bounds rho from above; near one it is sharper than the
  // power bracket, whose ends carry a few ulp of rounding
  out.rho = std::min(power.value, (out.M * d).cwiseQuotient(d).maxCoeff());
  out.power_iterations = power.iterations;
  out.rho_companion = spectral_radius_companion(out.M);
  if (!((out.M * d).array() < d.array()).all())
    throw CertificateError("M(alpha) delta < delta fails at the certified step size");
  if (!(out.rho < 1.0)) throw CertificateError("spectral radius is not below one");
  if (std::abs(out.rho - out.rho_companion) > 1e-8)
    throw CertificateError("spectral radius estimates disagree");
  return out;
}

/// Steady-state bound (I - M)^{-1} b for the static regime with
/// b = [0, 2 n tau^2 psi beta^2 sigma^2 / (1 - tau), 0, 2 n beta^2 sigma^2].
inline Eigen::Vector4d corollary1_steady_state(const StabilityCertificate& cert, double beta,
                                               double sigma2, int n) {
  if (!(cert.rho < 1.0)) throw CertificateError("steady state needs a spectral radius below one");
  const double tau = cert.params.tau, psi = cert.params.psi;
  Eigen::Vector4d b(0.0, 2.0 * n * tau * tau * psi * beta * beta * sigma2 / (1.0 - tau), 0.0,
                    2.0 * n * beta * beta * sigma2);
  // diagonal of I - M written out so that 1 - (1 - eps) does not cancel at tiny alpha
  Eigen::Matrix4d I_M = -cert.M;
  const auto& m = cert.m;
  const double a = cert.alpha, a2 = a * a, c2 = cert.params.c * cert.params.c;
  I_M(0, 0) = (1.0 - c2) / 2.0 - a2 * m[1];
  I_M(1, 1) = (1.0 - tau) - a2 * m[5];
  I_M(2, 2) = a * m[11];
  I_M(3, 3) = (1.0 - m[0]) - a2 * m[16];
  // rho < 1 already guarantees invertibility; tiny certified steps leave I - M badly
  // conditioned, so a rank threshold would reject valid certificates
  const Eigen::Vector4d s = Eigen::PartialPivLU<Eigen::Matrix4d>(I_M).solve(b);
  if (!s.allFinite() || (I_M * s - b).norm() > 1e-8 * (b.norm() + I_M.norm() * s.norm()))
    throw CertificateError("I - M could not be inverted accurately");
  return s;
}

// ---------------------------------------------------------------------------
// Inequality monitors over recorded traces.

enum class MonitorMode { monte_carlo, deterministic };

struct MonitorInputs {
  double alpha = 0.0, beta = 0.0, mu = 0.0, L = 0.0, sigma2 = 0.0, zeta0 = 0.0;
  int n = 0;
  ContractionParams params;        // rounds must cover the trace horizon
  std::optional<Eigen::Matrix4d> M;  // assembled system check when present
};

struct LemmaCheck {
  std::string name;
  long rounds_checked = 0;
  std::vector<long> violations;  // rounds t whose inequality failed
  double worst_ratio = 0.0;      // max LHS / RHS
};

struct MonitorReport {
  MonitorMode mode = MonitorMode::monte_carlo;
  int replicas = 0;
  double slack = 1.1;
  std::vector<LemmaCheck> checks;

  const LemmaCheck* find(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
  std::size_t total_violations() const {
    std::size_t k = 0;
    for (const auto& c : checks) k += c.violations.size();
    return k;
  }
};

/// Mean over replicas, index by index.
inline std::vector<TraceRow> average_traces(std::span<const std::vector<TraceRow>> replicas) {
  if (replicas.empty()) return {};
  std::size_t len = replicas.front().size();
  for (const auto& r : replicas) len = std::min(len, r.size());
  std::vector<TraceRow> mean(len);
  const double w = 1.0 / static_cast<double>(replicas.size());
  for (const auto& r : replicas)
    for (std::size_t t = 0; t < len; ++t) {
      auto& m = mean[t];
      const auto& x = r[t];
      m.consensus2 += w * x.consensus2;
      m.tracking2 += w * x.tracking2;
      m.opt2 += w * x.opt2;
      m.gradest2 += w * x.gradest2;
      m.sum_y2 += w * x.sum_y2;
      m.y_pi2 += w * x.y_pi2;
      m.dx2 += w * x.dx2;
      m.dz2 += w * x.dz2;
      m.q += w * x.q;
      m.p += w * x.p;
    }
  return mean;
}

inline MonitorReport lemma_monitors(std::span<const std::vector<TraceRow>> replicas,
                                    const MonitorInputs& in, MonitorMode mode,
                                    double slack = 1.1) {
  const int S = static_cast<int>(replicas.size());
  if (S < 1 || (mode == MonitorMode::monte_carlo && S < 20))
    throw DiagnosticsError("monitors need at least 20 replicas in monte-carlo mode", S);
  const auto v = average_traces(replicas);
  if (v.size() < 2) throw DiagnosticsError("trace too short for the monitors", 0.0);
  const long T = static_cast<long>(v.size()) - 1;
  if (static_cast<long>(in.params.rounds.size()) < T)
    throw ConfigError("contraction rounds do not cover the trace");

  MonitorReport rep;
  rep.mode = mode;
  rep.replicas = S;
  rep.slack = slack;
  std::map<std::string, LemmaCheck> checks;
  const std::vector<std::string> order = {"sum_y",       "y_pi_norm", "optimality",
                                          "consensus",   "step",      "z_increment",
                                          "tracking",    "gradient_error", "system"};
  for (const auto& name : order) checks[name].name = name;
  auto check = [&](const std::string& name, long t, double lhs, double rhs) {
    auto& c = checks[name];
    ++c.rounds_checked;
    if (rhs > 0.0) c.worst_ratio = std::max(c.worst_ratio, lhs / rhs);
    if (lhs > slack * rhs + 1e-14) c.violations.push_back(t);
  };

  const double a = in.alpha, a2 = a * a, L2 = in.L * in.L, dn = in.n, b = in.beta;
  const double c = in.params.c, c2 = c * c, tau = in.params.tau, ob2 = (1.0 - b) * (1.0 - b);
  for (long t = 0; t < T; ++t) {
    const auto& r = in.params.rounds[static_cast<std::size_t>(t)];
    const TraceRow& x = v[static_cast<std::size_t>(t)];
    const TraceRow& y = v[static_cast<std::size_t>(t) + 1];
    const double ph2 = r.varphi * r.varphi, g2 = r.gamma * r.gamma;
    const double cp1 = (c * r.varphi_next + 1.0) * (c * r.varphi_next + 1.0);
    const double cpp = (c * r.varphi_next + r.varphi) * (c * r.varphi_next + r.varphi);
    const double e = x.gradest2, cons = x.consensus2, opt = x.opt2, S2 = x.tracking2;

    const double base = 2.0 * dn * e + 2.0 * L2 * dn * ph2 * (opt + cons);
    check("sum_y", t, x.sum_y2, base);
    check("y_pi_norm", t, x.y_pi2, base + S2);

    if (a < 2.0 / (dn * (in.mu + in.L) * r.eta)) {
      const double rhs = (1.0 - in.mu * a * dn * r.eta) * opt + 4.0 * a / (in.mu * dn * r.eta) * S2 +
                         4.0 * a * r.eta / in.mu * e +
                         (a > 0.0 ? 4.0 / (in.mu * a * dn * r.eta) * x.p * x.p : 0.0) +
                         4.0 * a * r.eta * L2 * ph2 / in.mu * cons;
      if (a > 0.0 || x.p == 0.0) check("optimality", t, y.opt2, rhs);
    }

    const double k13 = c2 * g2 * (1.0 + c2) / (1.0 - c2);
    check("consensus", t, y.consensus2,
          ((1.0 + c2) / 2.0 + 2.0 * a2 * k13 * L2 * dn * ph2) * cons + a2 * k13 * S2 +
              2.0 * a2 * k13 * L2 * dn * ph2 * opt + 2.0 * a2 * k13 * dn * e);

    check("step", t, x.dx2,
          (2.0 * cpp + 4.0 * a2 * g2 * L2 * dn * ph2 * cp1) * cons +
              4.0 * a2 * g2 * cp1 * L2 * dn * ph2 * opt + 4.0 * a2 * g2 * cp1 * dn * e +
              2.0 * a2 * g2 * cp1 * S2);

    const double b2 = b * b;
    check("z_increment", t, x.dz2,
          (6.0 * L2 * cpp + 12.0 * a2 * L2 * L2 * dn * ph2 * cp1 * g2) * cons +
              12.0 * a2 * L2 * L2 * dn * ph2 * cp1 * g2 * opt +
              (12.0 * a2 * L2 * dn * cp1 * g2 + 3.0 * b2) * e + 6.0 * a2 * L2 * cp1 * g2 * S2 +
              6.0 * b2 * dn * x.q * x.q + 6.0 * b2 * dn * in.sigma2);

    check("tracking", t, y.tracking2,
          tau * S2 + tau * tau * r.kappa * r.kappa / (1.0 - tau) * x.dz2);

    check("gradient_error", t, y.gradest2,
          ob2 * (1.0 + in.zeta0) * e + (8.0 + 1.0 / in.zeta0) * dn * ob2 * x.q * x.q +
              dn * b2 * in.sigma2 + 12.0 * ob2 * L2 * x.dx2);

    if (in.M && a > 0.0) {
      const double psi = in.params.psi;
      const Eigen::Vector4d V(cons, S2, opt, e), Vn(y.consensus2, y.tracking2, y.opt2, y.gradest2);
      const double k1 = 6.0 * dn * b2 * tau * tau * psi / (1.0 - tau);
      const double k2 = 4.0 / (in.mu * a * dn * in.params.eta);
      const double k3 = (8.0 + 1.0 / in.zeta0) * dn * ob2;
      const Eigen::Vector4d b1(0.0, k1 * x.q * x.q, k2 * x.p * x.p, k3 * x.q * x.q);
      const Eigen::Vector4d bb(0.0, 6.0 * dn * tau * tau * psi * b2 * in.sigma2 / (1.0 - tau), 0.0,
                               2.0 * dn * b2 * in.sigma2);
      const Eigen::Vector4d rhs = *in.M * V + b1 + bb;
      double worst_lhs = 0.0, worst_rhs = 1.0, worst = -1.0;
      for (int k = 0; k < 4; ++k) {
        const double ratio = rhs[k] > 0.0 ? Vn[k] / rhs[k] : (Vn[k] > 0.0 ? 1e300 : 0.0);
        if (ratio > worst) {
          worst = ratio;
          worst_lhs = Vn[k];
          worst_rhs = rhs[k];
        }
      }
      check("system", t, worst_lhs, worst_rhs);
    }
  }
  for (const auto& name : order) rep.checks.push_back(checks[name]);
  return rep;
}

inline const char* to_string(MonitorMode m) {
  return m == MonitorMode::monte_carlo ? "monte_carlo" : "deterministic";
}

inline void write_monitor_report(std::ostream& os, const MonitorReport& r) {
  os << "[monitors]\nmode = " << to_string(r.mode) << "\nreplicas = " << r.replicas
     << "\nslack = " << r.slack << "\ntotal_violations = " << r.total_violations() << "\n";
  for (const auto& c : r.checks) {
    os << "\n[monitor." << c.name << "]\nrounds_checked = " << c.rounds_checked
       << "\nviolations = " << c.violations.size() << "\nworst_ratio = " << std::setprecision(6)
       << c.worst_ratio << "\n";
    if (!c.violations.empty()) {
      os << "violation_rounds =";
      for (std::size_t k = 0; k < c.violations.size() && k < 20; ++k) os << ' ' << c.violations[k];
      if (c.violations.size() > 20) os << " ...";
      os << "\n";
    }
  }
}

/// Structured text report of a certificate. Also lists the per-round
/// factor-6 forms of nu and zeta next to the uniform constants used in M,
/// since the two definitions differ.
inline void write_certificate_report(std::ostream& os, const StabilityCertificate& s) {
  const auto& p = s.params;
  os << std::setprecision(12);
  os << "[certificate]\nversion = 1\nn = " << s.n << "\nmu = " << s.mu << "\nL = " << s.L
     << "\nbeta = " << s.beta << "\nzeta0 = " << s.zeta0 << "\nalpha = " << s.alpha << "\n";
  os << "\n[contraction]\nrounds = " << p.rounds.size() << "\nc = " << p.c << "\ntau = " << p.tau
     << "\neta = " << p.eta << "\npsi = " << p.psi << "\nkappa = " << p.kappa
     << "\nvarphi = " << p.varphi << "\ngamma = " << p.gamma << "\na = " << p.a << "\nb = " << p.b
     << "\n";
  os << "\n[constants]\nzeta = " << s.zeta() << "\nnu = " << s.nu() << "\n";
  for (int k = 0; k <= 16; ++k) os << "m" << k << " = " << s.m[static_cast<std::size_t>(k)] << "\n";
  os << "\n[matrix]\n";
  for (int i = 0; i < 4; ++i) {
    os << "row" << i + 1 << " =";
    for (int j = 0; j < 4; ++j) os << ' ' << s.M(i, j);
    os << "\n";
  }
  const Eigen::Vector4d md = s.M * s.delta;
  os << "\n[delta]\ndelta = " << s.delta[0] << ' ' << s.delta[1] << ' ' << s.delta[2] << ' '
     << s.delta[3] << "\nM_delta = " << md[0] << ' ' << md[1] << ' ' << md[2] << ' ' << md[3]
     << "\nM_delta_below_delta = " << (((md.array() < s.delta.array()).all()) ? "true" : "false")
     << "\n";
  os << "\n[bounds]\nB1 = " << s.bounds[0] << "\nB2 = " << s.bounds[1] << "\nB3 = " << s.bounds[2]
     << "\ngd = " << s.bounds[3] << "\n";
  os << "\n[spectral]\nrho_power = " << s.rho << "\nrho_companion = " << s.rho_companion
     << "\npower_iterations = " << s.power_iterations << "\nagree_1e-8 = "
     << (std::abs(s.rho - s.rho_companion) <= 1e-8 ? "true" : "false") << "\n";
  if (s.steady_state) {
    const auto& v = *s.steady_state;
    os << "\n[steady_state]\nconsensus = " << v[0] << "\ntracking = " << v[1]
       << "\noptimality = " << v[2] << "\ngradient_error = " << v[3] << "\n";
  }
  double nu_t = 0.0, zeta_t = 0.0;
  const double L2 = s.L * s.L;
  for (const auto& r : p.rounds) {
    nu_t = std::max(nu_t, 6.0 * L2 * std::pow(p.c * r.varphi_next + 1.0, 2) * r.gamma * r.gamma *
                              p.tau * p.tau * r.psi / (1.0 - p.tau));
    zeta_t = std::max(zeta_t, 6.0 * L2 * std::pow(p.c * r.varphi_next + r.varphi, 2) * p.tau *
                                  p.tau * r.psi / (1.0 - p.tau));
  }
  os << "\n[audit]\nnu_t_max_factor6 = " << nu_t << "\nzeta_t_max_factor6 = " << zeta_t
     << "\nnote = per-round nu_t/zeta_t use factor 6 and gamma_t; M uses the uniform nu and the "
        "factor-24 zeta\n";
}

}  // namespace tvhsgt

#endif  // TVHSGT_ANALYSIS_HPP
