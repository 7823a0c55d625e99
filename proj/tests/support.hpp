#ifndef TVHSGT_TESTS_SUPPORT_HPP
#define TVHSGT_TESTS_SUPPORT_HPP

#include <Eigen/Dense>

#include <memory>
#include <vector>

#include "tvhsgt/dataset.hpp"
#include "tvhsgt/oracle.hpp"
#include "tvhsgt/random.hpp"

namespace tvhsgt::testing {

/// Random quadratic shards: a_s ~ N(0, I), b_s = a_s' w + noise.
inline std::vector<Shard> quadratic_shards(int agents, Eigen::Index dim, Eigen::Index rows,
                                           std::uint64_t seed, double noise = 0.1) {
  DatasetSpec spec;
  spec.loss = LossKind::quadratic;
  spec.agents = agents;
  spec.dim = dim;
  spec.samples_per_agent = rows;
  spec.noise = noise;
  return make_synthetic(spec, seed);
}

inline OnlineProblem problem_from(const std::vector<Shard>& shards, LossKind kind, double r,
                                  Eigen::Index batch, std::uint64_t seed, Drift drift = {}) {
  DatasetSpec spec;
  spec.loss = kind;
  spec.r = r;
  spec.batch_size = batch;
  spec.agents = static_cast<int>(shards.size());
  spec.drift = drift;
  return make_problem(shards, spec, seed);
}

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
  return m;
}

inline Eigen::VectorXd random_simplex(Eigen::Index n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (Eigen::Index k = 0; k < n; ++k) v[k] = 0.05 + rng.uniform();
  return v / v.sum();
}

}  // namespace tvhsgt::testing

#endif
