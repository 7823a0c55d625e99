#ifndef TVHSGT_ORACLE_HPP
#define TVHSGT_ORACLE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "tvhsgt/error.hpp"
#include "tvhsgt/loss.hpp"
#include "tvhsgt/random.hpp"

namespace tvhsgt {

/// A block of samples stored densely, one row per sample.
struct Shard {
  RowMatrix features;
  Eigen::VectorXd labels;

  Eigen::Index size() const noexcept { return features.rows(); }
  Eigen::Index dim() const noexcept { return features.cols(); }
  Sample sample(Eigen::Index k) const { return {features.row(k).transpose(), labels[k]}; }

  static Shard from_samples(std::span<const Sample> samples) {
    Shard s;
    if (!samples.empty()) stack_samples(samples, s.features, s.labels);
    return s;
  }
};

/// Per-round transformation of an agent's data distribution (synthetic mode).
///  rotation: features rotated by rotation*t radians in the plane of coordinates 0 and 1;
///  label_shift: regression targets shifted by label_shift*t;
///  label_flip: each binary label flipped at round t with this probability.
struct Drift {
  double rotation = 0.0;
  double label_shift = 0.0;
  double label_flip = 0.0;
  std::uint64_t seed = 0;

  bool active() const noexcept { return rotation != 0.0 || label_shift != 0.0 || label_flip != 0.0; }
};

namespace detail {

// Rotates every (k d, k d + 1) coordinate pair by `angle`.
inline void rotate_blocks(Eigen::VectorXd& v, Eigen::Index d, double angle) {
  if (angle == 0.0) return;
  const double c = std::cos(angle), s = std::sin(angle);
  for (Eigen::Index off = 0; off + 1 < v.size(); off += d) {
    const double x0 = v[off], x1 = v[off + 1];
    v[off] = c * x0 - s * x1;
    v[off + 1] = s * x0 + c * x1;
  }
}

}  // namespace detail

/// Agent i's round-t objective f_{i,t}: the loss over its shard under the
/// round-t drift. Exact gradients use the whole shard, stochastic ones a row subset.
class LocalObjective {
 public:
  LocalObjective(std::shared_ptr<const Shard> shard, LossKind kind, double r, Drift drift = {},
                 int agent = 0)
      : shard_(std::move(shard)), kind_(kind), r_(r), drift_(drift), agent_(agent) {
    if (!shard_ || shard_->size() == 0) throw ConfigError("agent shard is empty");
    if (r < 0.0) throw ConfigError("regularization must be nonnegative");
    if (drift_.rotation != 0.0 && shard_->dim() < 2)
      throw ConfigError("rotation drift needs at least two features");
    if (drift_.label_shift != 0.0 && kind_ != LossKind::quadratic)
      throw ConfigError("label_shift drift applies to the quadratic loss only");
    if (drift_.label_flip != 0.0 && kind_ != LossKind::binary_logistic)
      throw ConfigError("label_flip drift applies to the binary logistic loss only");
  }

  const Shard& shard() const noexcept { return *shard_; }
  LossKind kind() const noexcept { return kind_; }
  double regularization() const noexcept { return r_; }
  const Drift& drift() const noexcept { return drift_; }
  Eigen::Index param_dim() const noexcept { return tvhsgt::param_dim(kind_, shard_->dim()); }
  bool time_varying() const noexcept { return drift_.active(); }

  ValueGrad full(const Eigen::VectorXd& x, long t) const {
    return evaluate(x, t, shard_->features, labels_at(t));
  }

  ValueGrad on_rows(const Eigen::VectorXd& x, std::span<const int> rows, long t) const {
    RowMatrix f(static_cast<Eigen::Index>(rows.size()), shard_->dim());
    Eigen::VectorXd b(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto row = static_cast<Eigen::Index>(rows[k]);
      f.row(static_cast<Eigen::Index>(k)) = shard_->features.row(row);
      b[static_cast<Eigen::Index>(k)] = label_at(row, t);
    }
    return evaluate(x, t, f, b);
  }

  Eigen::MatrixXd hessian(const Eigen::VectorXd& x, long t) const {
    const double angle = drift_.rotation * static_cast<double>(t);
    Eigen::VectorXd xr = x;
    detail::rotate_blocks(xr, shard_->dim(), -angle);
    Eigen::MatrixXd H = loss_hessian(kind_, xr, shard_->features, r_);
    if (angle != 0.0) {
      Eigen::MatrixXd R = Eigen::MatrixXd::Identity(H.rows(), H.cols());
      R(0, 0) = std::cos(angle);
      R(0, 1) = -std::sin(angle);
      R(1, 0) = std::sin(angle);
      R(1, 1) = std::cos(angle);
      H = R * H * R.transpose();
    }
    return H;
  }

  /// Fraction of shard samples classified correctly by x at round t.
  double correct(const Eigen::VectorXd& x, long t, double& count) const {
    const Eigen::Index d = shard_->dim();
    Eigen::VectorXd xr = x;
    detail::rotate_blocks(xr, d, -drift_.rotation * static_cast<double>(t));
    const Eigen::VectorXd labels = labels_at(t);
    double hits = 0.0;
    if (kind_ == LossKind::binary_logistic) {
      const Eigen::VectorXd u = shard_->features * xr;
      for (Eigen::Index s = 0; s < u.size(); ++s) hits += ((u[s] > 0.0) == (labels[s] > 0.5));
    } else if (kind_ == LossKind::softmax) {
      const Eigen::Map<const Eigen::MatrixXd> Theta(xr.data(), d, kNumClasses);
      const Eigen::MatrixXd scores = shard_->features * Theta;
      for (Eigen::Index s = 0; s < scores.rows(); ++s) {
        Eigen::Index best = 0;
        scores.row(s).maxCoeff(&best);
        hits += (static_cast<double>(best) == labels[s]);
      }
    }
    count += static_cast<double>(shard_->size());
    return hits;
  }

 private:
  double label_at(Eigen::Index row, long t) const {
    double b = shard_->labels[row];
    if (drift_.label_shift != 0.0) b += drift_.label_shift * static_cast<double>(t);
    if (drift_.label_flip != 0.0) {
      const std::uint64_t h = derive_seed(drift_.seed, static_cast<std::uint64_t>(agent_),
                                          static_cast<std::uint64_t>(t),
                                          static_cast<std::uint64_t>(row));
      if (static_cast<double>(h >> 11) * 0x1.0p-53 < drift_.label_flip) b = 1.0 - b;
    }
    return b;
  }

  Eigen::VectorXd labels_at(long t) const {
    if (drift_.label_shift == 0.0 && drift_.label_flip == 0.0) return shard_->labels;
    Eigen::VectorXd b(shard_->size());
    for (Eigen::Index k = 0; k < b.size(); ++k) b[k] = label_at(k, t);
    return b;
  }

  ValueGrad evaluate(const Eigen::VectorXd& x, long t, const Eigen::Ref<const RowMatrix>& f,
                     const Eigen::Ref<const Eigen::VectorXd>& b) const {
    const double angle = drift_.rotation * static_cast<double>(t);
    if (angle == 0.0) return loss_value_grad(kind_, x, f, b, r_);
    // features a -> R a is equivalent to evaluating at R' x and mapping the gradient back by R
    Eigen::VectorXd xr = x;
    detail::rotate_blocks(xr, shard_->dim(), -angle);
    ValueGrad out = loss_value_grad(kind_, xr, f, b, r_);
    detail::rotate_blocks(out.grad, shard_->dim(), angle);
    return out;
  }

  std::shared_ptr<const Shard> shard_;
  LossKind kind_;
  double r_;
  Drift drift_;
  int agent_;
};

/// Deterministic minibatch schedule for one agent. Round t reads the
/// (t mod K)-th contiguous slice of size batch_size, K = floor(N / batch_size).
/// Epoch 0 uses the shard order; later epochs use a permutation seeded by
/// (seed, agent, epoch). Without cycling, rounds beyond the first epoch fail.
class MinibatchStream {
 public:
  MinibatchStream(int agent, Eigen::Index shard_size, Eigen::Index batch_size, std::uint64_t seed,
                  bool cycling = true)
      : agent_(agent), shard_size_(shard_size), batch_size_(batch_size), seed_(seed),
        cycling_(cycling) {
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (batch_size > shard_size) throw ConfigError("batch_size exceeds the agent shard size");
  }

  int agent() const noexcept { return agent_; }
  Eigen::Index batch_size() const noexcept { return batch_size_; }
  Eigen::Index shard_size() const noexcept { return shard_size_; }
  bool full_batch() const noexcept { return batch_size_ == shard_size_; }
  long batches_per_epoch() const noexcept { return static_cast<long>(shard_size_ / batch_size_); }

  void rows(long t, std::vector<int>& out) const {
    if (t < 0) throw StreamError("negative round");
    const long per_epoch = batches_per_epoch();
    const long epoch = t / per_epoch;
    const long slot = t % per_epoch;
    if (epoch > 0 && !cycling_)
      throw StreamError("agent " + std::to_string(agent_) + " exhausted its shard at round " +
                        std::to_string(t));
    const std::vector<int>& order = permutation(epoch);
    const auto begin = static_cast<std::size_t>(slot * batch_size_);
    out.assign(order.begin() + static_cast<std::ptrdiff_t>(begin),
               order.begin() + static_cast<std::ptrdiff_t>(begin + static_cast<std::size_t>(batch_size_)));
  }

  std::vector<int> rows(long t) const {
    std::vector<int> out;
    rows(t, out);
    return out;
  }

 private:
  const std::vector<int>& permutation(long epoch) const {
    if (epoch == cached_epoch_) return order_;
    order_.resize(static_cast<std::size_t>(shard_size_));
    std::iota(order_.begin(), order_.end(), 0);
    if (epoch > 0) {
      Rng rng(derive_seed(seed_, 0x6261746368ULL, static_cast<std::uint64_t>(agent_),
                          static_cast<std::uint64_t>(epoch)));
      rng.shuffle(order_);
    }
    cached_epoch_ = epoch;
    return order_;
  }

  int agent_;
  Eigen::Index shard_size_;
  Eigen::Index batch_size_;
  std::uint64_t seed_;
  bool cycling_;
  mutable long cached_epoch_ = -1;
  mutable std::vector<int> order_;
};

/// The networked online problem: n local objectives plus their sample streams.
/// Agent states are stacked as n x p matrices, one row per agent.
class OnlineProblem {
 public:
  OnlineProblem(std::vector<LocalObjective> agents, std::vector<MinibatchStream> streams)
      : agents_(std::move(agents)), streams_(std::move(streams)) {
    if (agents_.empty()) throw ConfigError("problem needs at least one agent");
    if (streams_.size() != agents_.size()) throw ConfigError("one stream per agent required");
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      if (agents_[i].param_dim() != agents_.front().param_dim() ||
          agents_[i].kind() != agents_.front().kind())
        throw ConfigError("agents disagree on model shape");
      if (streams_[i].shard_size() != agents_[i].shard().size())
        throw ConfigError("stream and shard sizes disagree");
    }
  }

  int agents() const noexcept { return static_cast<int>(agents_.size()); }
  Eigen::Index dim() const noexcept { return agents_.front().param_dim(); }
  LossKind kind() const noexcept { return agents_.front().kind(); }
  const LocalObjective& agent(int i) const { return agents_[static_cast<std::size_t>(i)]; }
  const MinibatchStream& stream(int i) const { return streams_[static_cast<std::size_t>(i)]; }
  bool time_varying() const noexcept {
    for (const auto& a : agents_)
      if (a.time_varying()) return true;
    return false;
  }
  bool full_batch() const noexcept {
    for (const auto& s : streams_)
      if (!s.full_batch()) return false;
    return true;
  }

  /// Row i: gradient of agent i's round-t loss at X.row(i) on its round-t minibatch.
  Eigen::MatrixXd stochastic_gradients(const Eigen::MatrixXd& X, long t) const {
    Eigen::MatrixXd G(X.rows(), X.cols());
    std::vector<int> rows;
    for (int i = 0; i < agents(); ++i) {
      streams_[static_cast<std::size_t>(i)].rows(t, rows);
      G.row(i) = agents_[static_cast<std::size_t>(i)].on_rows(X.row(i).transpose(), rows, t).grad.transpose();
    }
    return G;
  }

  Eigen::VectorXd stochastic_gradient(int i, const Eigen::VectorXd& x, long t) const {
    return agents_[static_cast<std::size_t>(i)].on_rows(x, streams_[static_cast<std::size_t>(i)].rows(t), t).grad;
  }

  /// Row i: exact gradient of f_{i,t} at X.row(i).
  Eigen::MatrixXd exact_gradients(const Eigen::MatrixXd& X, long t) const {
    Eigen::MatrixXd G(X.rows(), X.cols());
    for (int i = 0; i < agents(); ++i)
      G.row(i) = agents_[static_cast<std::size_t>(i)].full(X.row(i).transpose(), t).grad.transpose();
    return G;
  }

  /// f_t(x) = (1/n) sum_i f_{i,t}(x) with gradient.
  ValueGrad global(const Eigen::VectorXd& x, long t) const {
    ValueGrad out{0.0, Eigen::VectorXd::Zero(x.size())};
    for (const auto& a : agents_) {
      ValueGrad vg = a.full(x, t);
      out.value += vg.value;
      out.grad += vg.grad;
    }
    const double n = static_cast<double>(agents_.size());
    out.value /= n;
    out.grad /= n;
    return out;
  }

  Eigen::MatrixXd global_hessian(const Eigen::VectorXd& x, long t) const {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(x.size(), x.size());
    for (const auto& a : agents_) H += a.hessian(x, t);
    return H / static_cast<double>(agents_.size());
  }

  /// Classification accuracy of x over all shards at round t (NaN for regression).
  double accuracy(const Eigen::VectorXd& x, long t) const {
    if (kind() == LossKind::quadratic) return std::numeric_limits<double>::quiet_NaN();
    double hits = 0.0, count = 0.0;
    for (const auto& a : agents_) hits += a.correct(x, t, count);
    return hits / count;
  }

 private:
  std::vector<LocalObjective> agents_;
  std::vector<MinibatchStream> streams_;
};

/// Curvature and noise constants of a loss on a shard.
struct LossProfile {
  double L_g = 0.0;
  double mu = 0.0;
  double sigma2 = 0.0;
  double r = 0.0;
};

/// Largest eigenvalue of (1/N) F'F by power iteration.
inline double gram_lambda_max(const RowMatrix& features, double tol = 1e-9, int max_iter = 10000) {
  const Eigen::Index d = features.cols();
  const double m = static_cast<double>(features.rows());
  Eigen::VectorXd v(d);
  Rng rng(0x706f776572ULL);
  for (Eigen::Index k = 0; k < d; ++k) v[k] = 1.0 + 0.1 * rng.uniform();
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd w = features.transpose() * (features * v) / m;
    const double next = v.dot(w);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    if (std::abs(next - lambda) <= tol * std::max(1.0, std::abs(next))) return next;
    lambda = next;
  }
  throw AnalysisError("power iteration did not converge", lambda);
}

/// Monte-Carlo E||g_batch(theta) - g_full(theta)||^2 over uniformly drawn batches.
inline double estimate_sigma2(const LocalObjective& obj, const Eigen::VectorXd& theta,
                              Eigen::Index batch_size, std::uint64_t seed, int samples = 1000,
                              long t = 0) {
  const Eigen::Index n = obj.shard().size();
  if (batch_size >= n) return 0.0;
  const Eigen::VectorXd full = obj.full(theta, t).grad;
  Rng rng(derive_seed(seed, 0x7369676d61ULL));
  std::vector<int> idx(static_cast<std::size_t>(n));
  double acc = 0.0;
  for (int k = 0; k < samples; ++k) {
    std::iota(idx.begin(), idx.end(), 0);
    for (Eigen::Index j = 0; j < batch_size; ++j) {
      const auto pick = static_cast<std::size_t>(j) +
                        static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(n - j)));
      std::swap(idx[static_cast<std::size_t>(j)], idx[pick]);
    }
    const std::span<const int> rows(idx.data(), static_cast<std::size_t>(batch_size));
    acc += (obj.on_rows(theta, rows, t).grad - full).squaredNorm();
  }
  return acc / samples;
}

/// mu = r (logistic/softmax) or lambda_min of the Gram matrix + r (quadratic);
/// L_g = factor * lambda_max((1/N) sum a a') + r with factor 1/4, 1/2, 1 for
/// logistic, softmax, quadratic; sigma2 by Monte-Carlo at theta (zero if omitted).
inline LossProfile estimate_constants(const Shard& shard, LossKind kind, double r,
                                      Eigen::Index batch_size = 0, std::uint64_t seed = 0,
                                      int sigma_samples = 1000,
                                      std::optional<Eigen::VectorXd> theta = std::nullopt) {
  if (shard.size() == 0) throw ConfigError("estimate_constants needs a nonempty shard");
  LossProfile p;
  p.r = r;
  const double factor =
      kind == LossKind::binary_logistic ? 0.25 : (kind == LossKind::softmax ? 0.5 : 1.0);
  p.L_g = factor * gram_lambda_max(shard.features) + r;
  p.mu = r;
  if (kind == LossKind::quadratic) {
    const Eigen::MatrixXd gram =
        shard.features.transpose() * shard.features / static_cast<double>(shard.size());
    p.mu = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram, Eigen::EigenvaluesOnly)
               .eigenvalues()
               .minCoeff() + r;
    p.mu = std::max(p.mu, r);
  }
  if (batch_size > 0 && batch_size < shard.size()) {
    auto sh = std::make_shared<Shard>(shard);
    LocalObjective obj(sh, kind, r);
    const Eigen::VectorXd th = theta ? *theta : Eigen::VectorXd::Zero(obj.param_dim());
    p.sigma2 = estimate_sigma2(obj, th, batch_size, seed, sigma_samples);
  }
  return p;
}

/// Constants for the whole network: L_g is the largest local constant, mu the
/// strong-convexity constant of the global objective, sigma2 the largest local
/// noise estimate at theta.
inline LossProfile estimate_problem_constants(const OnlineProblem& problem,
                                              const Eigen::VectorXd& theta, std::uint64_t seed,
                                              int sigma_samples = 1000) {
  LossProfile out;
  const auto kind = problem.kind();
  out.r = problem.agent(0).regularization();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(problem.agent(0).shard().dim(),
                                               problem.agent(0).shard().dim());
  for (int i = 0; i < problem.agents(); ++i) {
    const auto& obj = problem.agent(i);
    const auto prof = estimate_constants(obj.shard(), kind, obj.regularization());
    out.L_g = std::max(out.L_g, prof.L_g);
    if (!problem.stream(i).full_batch())
      out.sigma2 = std::max(out.sigma2, estimate_sigma2(obj, theta, problem.stream(i).batch_size(),
                                                        derive_seed(seed, static_cast<std::uint64_t>(i)),
                                                        sigma_samples));
    if (kind == LossKind::quadratic)
      gram += obj.shard().features.transpose() * obj.shard().features /
              static_cast<double>(obj.shard().size());
  }
  out.mu = out.r;
  if (kind == LossKind::quadratic) {
    gram /= static_cast<double>(problem.agents());
    const double lmin = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram, Eigen::EigenvaluesOnly)
                            .eigenvalues()
                            .minCoeff();
    out.mu = std::max(lmin, 0.0) + out.r;
  }
  return out;
}

/// Minimizer of the global round-t objective, to gradient norm <= tol. Newton's
/// method with step halving for the logistic and quadratic losses (dimension up
/// to 512); Nesterov's accelerated gradient with restarts otherwise.
inline Eigen::VectorXd round_optimum(const OnlineProblem& problem, long t,
                                     const Eigen::VectorXd& start, double tol = 1e-10,
                                     int max_iter = 200, double smoothness = 0.0) {
  Eigen::VectorXd x = start;
  ValueGrad cur = problem.global(x, t);
  if (problem.kind() != LossKind::softmax && problem.dim() <= 512) {
    for (int it = 0; it < max_iter; ++it) {
      const double gnorm = cur.grad.norm();
      if (gnorm <= tol) return x;
      const Eigen::VectorXd dx = problem.global_hessian(x, t).ldlt().solve(cur.grad);
      double step = 1.0;
      for (;;) {
        Eigen::VectorXd trial = x - step * dx;
        ValueGrad next = problem.global(trial, t);
        if (next.grad.norm() < gnorm || next.value < cur.value - 1e-4 * step * cur.grad.dot(dx) ||
            step < 1e-12) {
          x = std::move(trial);
          cur = std::move(next);
          break;
        }
        step *= 0.5;
      }
    }
    throw AnalysisError("round optimum: Newton iteration cap exceeded", cur.grad.norm());
  }
  double L = smoothness;
  if (!(L > 0.0)) {
    for (int i = 0; i < problem.agents(); ++i) {
      const auto& a = problem.agent(i);
      L = std::max(L, estimate_constants(a.shard(), a.kind(), a.regularization()).L_g);
    }
  }
  Eigen::VectorXd prev = x;
  double theta = 1.0;
  const int cap = max_iter * 500;
  for (int it = 0; it < cap; ++it) {
    if (cur.grad.norm() <= tol) return x;
    const double next_theta = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
    const Eigen::VectorXd y = x + ((theta - 1.0) / next_theta) * (x - prev);
    const ValueGrad gy = problem.global(y, t);
    Eigen::VectorXd trial = y - gy.grad / L;
    ValueGrad next = problem.global(trial, t);
    if (next.value > cur.value) {  // adaptive restart
      theta = 1.0;
      prev = x;
      trial = x - cur.grad / L;
      next = problem.global(trial, t);
    } else {
      theta = next_theta;
      prev = x;
    }
    x = std::move(trial);
    cur = std::move(next);
  }
  throw AnalysisError("round optimum: gradient iteration cap exceeded", cur.grad.norm());
}

}  // namespace tvhsgt

#endif  // TVHSGT_ORACLE_HPP
