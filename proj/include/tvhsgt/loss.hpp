#ifndef TVHSGT_LOSS_HPP
#define TVHSGT_LOSS_HPP

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tvhsgt/error.hpp"

namespace tvhsgt {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kNumClasses = 10;

enum class LossKind { binary_logistic, softmax, quadratic };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::binary_logistic: return "logistic";
    case LossKind::softmax: return "softmax";
    case LossKind::quadratic: return "quadratic";
  }
  return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "logistic" || s == "binary_logistic") return LossKind::binary_logistic;
  if (s == "softmax") return LossKind::softmax;
  if (s == "quadratic") return LossKind::quadratic;
  throw ConfigError("unknown loss kind '" + s + "'");
}

/// Number of model parameters for feature dimension d.
inline Eigen::Index param_dim(LossKind k, Eigen::Index d) {
  return k == LossKind::softmax ? d * kNumClasses : d;
}

struct Sample {
  Eigen::VectorXd a;
  double b = 0.0;  // {0,1} binary, {0..9} multiclass, real target for quadratic
};

struct ValueGrad {
  double value = 0.0;
  Eigen::VectorXd grad;
};

namespace detail {

// log(1 + exp(u)) without overflow
inline double softplus(double u) { return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u)); }

inline double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

inline void require_batch(Eigen::Index rows, Eigen::Index labels) {
  if (rows == 0) throw DomainError("empty batch");
  if (rows != labels) throw DomainError("feature/label count mismatch");
}

}  // namespace detail

/// (1/M) sum_s [(1-b_s) a_s'theta - log s(a_s'theta)] + (r/2)||theta||^2 and its gradient.
inline ValueGrad binary_logistic_value_grad(const Eigen::Ref<const Eigen::VectorXd>& theta,
                                            const Eigen::Ref<const RowMatrix>& features,
                                            const Eigen::Ref<const Eigen::VectorXd>& labels,
                                            double r) {
  detail::require_batch(features.rows(), labels.size());
  if (features.cols() != theta.size()) throw DomainError("dimension mismatch");
  const double m = static_cast<double>(features.rows());
  const Eigen::VectorXd u = features * theta;
  Eigen::VectorXd resid(u.size());
  double value = 0.0;
  for (Eigen::Index s = 0; s < u.size(); ++s) {
    // (1-b)u - log s(u) = softplus(u) - b u
    value += detail::softplus(u[s]) - labels[s] * u[s];
    resid[s] = detail::sigmoid(u[s]) - labels[s];
  }
  ValueGrad out;
  out.value = value / m + 0.5 * r * theta.squaredNorm();
  out.grad = features.transpose() * resid / m + r * theta;
  return out;
}

/// Multiclass softmax loss. theta holds the d x 10 matrix column-major
/// (class k occupies entries [k d, (k+1) d)).
inline ValueGrad softmax_value_grad(const Eigen::Ref<const Eigen::VectorXd>& theta,
                                    const Eigen::Ref<const RowMatrix>& features,
                                    const Eigen::Ref<const Eigen::VectorXd>& labels, double r) {
  detail::require_batch(features.rows(), labels.size());
  const Eigen::Index d = features.cols();
  if (theta.size() != d * kNumClasses) throw DomainError("dimension mismatch");
  const Eigen::Map<const Eigen::MatrixXd> Theta(theta.data(), d, kNumClasses);
  const double m = static_cast<double>(features.rows());
  Eigen::MatrixXd P = features * Theta;  // M x 10 scores
  double value = 0.0;
  for (Eigen::Index s = 0; s < P.rows(); ++s) {
    const double lab = labels[s];
    if (!(lab >= 0.0 && lab < kNumClasses) || lab != std::floor(lab))
      throw DomainError("class label out of range");
    const auto k = static_cast<Eigen::Index>(lab);
    const double top = P.row(s).maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < kNumClasses; ++c) z += std::exp(P(s, c) - top);
    value += top + std::log(z) - P(s, k);
    for (Eigen::Index c = 0; c < kNumClasses; ++c) P(s, c) = std::exp(P(s, c) - top) / z;
    P(s, k) -= 1.0;
  }
  ValueGrad out;
  out.value = value / m + 0.5 * r * theta.squaredNorm();
  out.grad.resize(theta.size());
  Eigen::Map<Eigen::MatrixXd> G(out.grad.data(), d, kNumClasses);
  G.noalias() = features.transpose() * P / m;
  out.grad += r * theta;
  return out;
}

/// (1/2M) sum_s (a_s'theta - b_s)^2 + (r/2)||theta||^2.
inline ValueGrad quadratic_value_grad(const Eigen::Ref<const Eigen::VectorXd>& theta,
                                      const Eigen::Ref<const RowMatrix>& features,
                                      const Eigen::Ref<const Eigen::VectorXd>& labels, double r) {
  detail::require_batch(features.rows(), labels.size());
  if (features.cols() != theta.size()) throw DomainError("dimension mismatch");
  const double m = static_cast<double>(features.rows());
  const Eigen::VectorXd u = features * theta - labels;
  ValueGrad out;
  out.value = 0.5 * u.squaredNorm() / m + 0.5 * r * theta.squaredNorm();
  out.grad = features.transpose() * u / m + r * theta;
  return out;
}

inline ValueGrad loss_value_grad(LossKind kind, const Eigen::Ref<const Eigen::VectorXd>& theta,
                                 const Eigen::Ref<const RowMatrix>& features,
                                 const Eigen::Ref<const Eigen::VectorXd>& labels, double r) {
  switch (kind) {
    case LossKind::binary_logistic: return binary_logistic_value_grad(theta, features, labels, r);
    case LossKind::softmax: return softmax_value_grad(theta, features, labels, r);
    case LossKind::quadratic: return quadratic_value_grad(theta, features, labels, r);
  }
  throw DomainError("unknown loss");
}

/// Hessian of the binary logistic or quadratic loss (not provided for softmax).
inline Eigen::MatrixXd loss_hessian(LossKind kind, const Eigen::Ref<const Eigen::VectorXd>& theta,
                                    const Eigen::Ref<const RowMatrix>& features, double r) {
  const double m = static_cast<double>(features.rows());
  const Eigen::Index d = features.cols();
  Eigen::MatrixXd H = r * Eigen::MatrixXd::Identity(d, d);
  if (kind == LossKind::quadratic) {
    H.selfadjointView<Eigen::Lower>().rankUpdate(features.transpose(), 1.0 / m);
  } else if (kind == LossKind::binary_logistic) {
    const Eigen::VectorXd u = features * theta;
    RowMatrix scaled = features;
    for (Eigen::Index s = 0; s < u.size(); ++s) {
      const double p = detail::sigmoid(u[s]);
      scaled.row(s) *= std::sqrt(p * (1.0 - p));
    }
    H.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose(), 1.0 / m);
  } else {
    throw DomainError("explicit Hessian is not available for the softmax loss");
  }
  return H.selfadjointView<Eigen::Lower>();
}

/// Convenience overloads on sample lists.
inline void stack_samples(std::span<const Sample> batch, RowMatrix& features,
                          Eigen::VectorXd& labels) {
  if (batch.empty()) throw DomainError("empty batch");
  const Eigen::Index d = batch.front().a.size();
  features.resize(static_cast<Eigen::Index>(batch.size()), d);
  labels.resize(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t s = 0; s < batch.size(); ++s) {
    if (batch[s].a.size() != d) throw DomainError("dimension mismatch inside batch");
    features.row(static_cast<Eigen::Index>(s)) = batch[s].a.transpose();
    labels[static_cast<Eigen::Index>(s)] = batch[s].b;
  }
}

inline ValueGrad binary_logistic_value_grad(const Eigen::VectorXd& theta,
                                            std::span<const Sample> batch, double r) {
  RowMatrix f;
  Eigen::VectorXd b;
  stack_samples(batch, f, b);
  return binary_logistic_value_grad(theta, f, b, r);
}

inline ValueGrad softmax_value_grad(const Eigen::VectorXd& theta, std::span<const Sample> batch,
                                    double r) {
  RowMatrix f;
  Eigen::VectorXd b;
  stack_samples(batch, f, b);
  return softmax_value_grad(theta, f, b, r);
}

}  // namespace tvhsgt

#endif  // TVHSGT_LOSS_HPP
