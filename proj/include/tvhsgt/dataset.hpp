#ifndef TVHSGT_DATASET_HPP
#define TVHSGT_DATASET_HPP

#include <Eigen/Dense>

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <memory>
#include <numeric>
#include <ostream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tvhsgt/error.hpp"
#include "tvhsgt/loss.hpp"
#include "tvhsgt/oracle.hpp"
#include "tvhsgt/random.hpp"

namespace tvhsgt {

// ---------------------------------------------------------------------------
// LIBSVM text format: "label idx:val idx:val ..." with 1-based indices.

inline Shard parse_libsvm(std::istream& in, Eigen::Index min_dim = 0) {
  struct Row {
    double label;
    std::vector<std::pair<Eigen::Index, double>> entries;
  };
  std::vector<Row> rows;
  Eigen::Index dim = min_dim;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t pos = line.find_first_not_of(" \t");
    if (pos == std::string::npos || line[pos] == '#') continue;
    Row row{};
    bool have_label = false;
    while (pos != std::string::npos && pos < line.size()) {
      const std::size_t end = std::min(line.find_first_of(" \t", pos), line.size());
      const std::string_view tok(line.data() + pos, end - pos);
      const std::size_t col = pos + 1;
      if (!have_label) {
        std::string_view lab = tok;
        if (!lab.empty() && lab.front() == '+') lab.remove_prefix(1);
        double v = 0.0;
        auto [p, ec] = std::from_chars(lab.data(), lab.data() + lab.size(), v);
        if (ec != std::errc() || p != lab.data() + lab.size())
          throw IngestionError("libsvm: malformed label '" + std::string(tok) + "'", lineno, col);
        row.label = (v == -1.0) ? 0.0 : v;
        have_label = true;
      } else {
        const std::size_t colon = tok.find(':');
        if (colon == std::string_view::npos)
          throw IngestionError("libsvm: expected idx:val, got '" + std::string(tok) + "'", lineno, col);
        long idx = 0;
        double val = 0.0;
        auto [pi, eci] = std::from_chars(tok.data(), tok.data() + colon, idx);
        if (eci != std::errc() || pi != tok.data() + colon || idx < 1)
          throw IngestionError("libsvm: bad feature index in '" + std::string(tok) + "'", lineno, col);
        const char* vb = tok.data() + colon + 1;
        auto [pv, ecv] = std::from_chars(vb, tok.data() + tok.size(), val);
        if (ecv != std::errc() || pv != tok.data() + tok.size())
          throw IngestionError("libsvm: bad feature value in '" + std::string(tok) + "'", lineno,
                               col + colon + 1);
        row.entries.emplace_back(idx - 1, val);
        dim = std::max<Eigen::Index>(dim, idx);
      }
      pos = line.find_first_not_of(" \t", end);
    }
    rows.push_back(std::move(row));
  }
  Shard shard;
  shard.features = RowMatrix::Zero(static_cast<Eigen::Index>(rows.size()), dim);
  shard.labels.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t s = 0; s < rows.size(); ++s) {
    const auto r = static_cast<Eigen::Index>(s);
    shard.labels[r] = rows[s].label;
    for (const auto& [j, v] : rows[s].entries) shard.features(r, j) = v;
  }
  return shard;
}

inline Shard parse_libsvm(const std::string& path, Eigen::Index min_dim = 0) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open libsvm file '" + path + "'");
  return parse_libsvm(in, min_dim);
}

/// Writes nonzero features with shortest round-trip formatting; binary labels as -1/+1.
inline void write_libsvm(std::ostream& os, const Shard& shard) {
  char buf[64];
  auto put = [&](double v) {
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    os.write(buf, p - buf);
  };
  for (Eigen::Index s = 0; s < shard.size(); ++s) {
    const double lab = shard.labels[s];
    if (lab == 0.0) os << "-1";
    else if (lab == 1.0) os << "+1";
    else put(lab);
    for (Eigen::Index j = 0; j < shard.dim(); ++j) {
      const double v = shard.features(s, j);
      if (v == 0.0) continue;
      os << ' ' << (j + 1) << ':';
      put(v);
    }
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// IDX (MNIST) binary format, big-endian headers.

namespace detail {

inline std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open idx file '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  if (off + 4 > b.size()) throw IngestionError("idx: truncated header");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

}  // namespace detail

inline Shard parse_idx(const std::vector<unsigned char>& images,
                       const std::vector<unsigned char>& labels) {
  if (detail::be32(images, 0) != 0x00000803u) throw IngestionError("idx: bad image magic number");
  if (detail::be32(labels, 0) != 0x00000801u) throw IngestionError("idx: bad label magic number");
  const std::size_t count = detail::be32(images, 4);
  const std::size_t rows = detail::be32(images, 8);
  const std::size_t cols = detail::be32(images, 12);
  if (detail::be32(labels, 4) != count) throw IngestionError("idx: image and label counts differ");
  const std::size_t pixels = rows * cols;
  if (images.size() < 16 + count * pixels) throw IngestionError("idx: truncated image data");
  if (labels.size() < 8 + count) throw IngestionError("idx: truncated label data");
  Shard shard;
  shard.features.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(pixels));
  shard.labels.resize(static_cast<Eigen::Index>(count));
  for (std::size_t s = 0; s < count; ++s) {
    for (std::size_t p = 0; p < pixels; ++p)
      shard.features(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(p)) =
          images[16 + s * pixels + p] / 255.0;
    const unsigned lab = labels[8 + s];
    if (lab >= static_cast<unsigned>(kNumClasses)) throw IngestionError("idx: label out of range");
    shard.labels[static_cast<Eigen::Index>(s)] = lab;
  }
  return shard;
}

inline Shard parse_idx(const std::string& images_path, const std::string& labels_path) {
  return parse_idx(detail::read_all(images_path), detail::read_all(labels_path));
}

// ---------------------------------------------------------------------------
// Problem construction.

struct DatasetSpec {
  enum class Kind { synthetic, libsvm, idx };
  Kind kind = Kind::synthetic;
  std::string path;         // libsvm file or idx images
  std::string labels_path;  // idx labels
  LossKind loss = LossKind::binary_logistic;
  int agents = 10;
  Eigen::Index batch_size = 100;
  double r = 1e-5;
  bool cycling = true;
  Eigen::Index cap = 20000;  // maximum samples ingested from a real dataset
  // synthetic mode
  Eigen::Index dim = 20;
  Eigen::Index samples_per_agent = 1000;
  double feature_scale = 1.0;
  double heterogeneity = 0.0;
  double noise = 0.1;
  Drift drift;
};

/// Synthetic shards: features N(h m_i, s^2 I) with agent-specific mean m_i, labels
/// drawn from a planted model (Bernoulli, categorical, or linear plus Gaussian noise).
inline std::vector<Shard> make_synthetic(const DatasetSpec& spec, std::uint64_t seed) {
  const Eigen::Index d = spec.dim;
  if (d < 1 || spec.samples_per_agent < 1) throw ConfigError("synthetic dim and samples must be positive");
  Rng rng(derive_seed(seed, 0x73796e7468ULL));
  const int classes = spec.loss == LossKind::softmax ? kNumClasses : 1;
  Eigen::MatrixXd truth(d, classes);
  for (Eigen::Index k = 0; k < truth.size(); ++k)
    truth.data()[k] = rng.normal() / std::sqrt(static_cast<double>(d));
  std::vector<Shard> shards;
  for (int i = 0; i < spec.agents; ++i) {
    Eigen::VectorXd mean(d);
    for (Eigen::Index j = 0; j < d; ++j) mean[j] = spec.heterogeneity * rng.normal();
    Shard s;
    s.features.resize(spec.samples_per_agent, d);
    s.labels.resize(spec.samples_per_agent);
    for (Eigen::Index k = 0; k < spec.samples_per_agent; ++k) {
      for (Eigen::Index j = 0; j < d; ++j) s.features(k, j) = mean[j] + spec.feature_scale * rng.normal();
      const Eigen::VectorXd score = truth.transpose() * s.features.row(k).transpose();
      if (spec.loss == LossKind::quadratic) {
        s.labels[k] = score[0] + spec.noise * rng.normal();
      } else if (spec.loss == LossKind::binary_logistic) {
        s.labels[k] = rng.bernoulli(detail::sigmoid(score[0])) ? 1.0 : 0.0;
      } else {
        Eigen::VectorXd p = (score.array() - score.maxCoeff()).exp();
        p /= p.sum();
        double u = rng.uniform();
        Eigen::Index c = 0;
        while (c + 1 < classes && u >= p[c]) u -= p[c++];
        s.labels[k] = static_cast<double>(c);
      }
    }
    shards.push_back(std::move(s));
  }
  return shards;
}

/// Global pre-shuffle of at most `cap` samples, then equal contiguous shards per agent.
inline std::vector<Shard> partition(const Shard& all, int agents, Eigen::Index cap,
                                    std::uint64_t seed) {
  if (agents < 1) throw ConfigError("agents must be positive");
  std::vector<int> order(static_cast<std::size_t>(all.size()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x73687566ULL));
  rng.shuffle(order);
  const Eigen::Index used = std::min<Eigen::Index>(all.size(), cap);
  const Eigen::Index per = used / agents;
  if (per < 1) throw ConfigError("dataset too small for the requested number of agents");
  std::vector<Shard> shards;
  for (int i = 0; i < agents; ++i) {
    Shard s;
    s.features.resize(per, all.dim());
    s.labels.resize(per);
    for (Eigen::Index k = 0; k < per; ++k) {
      const int src = order[static_cast<std::size_t>(i * per + k)];
      s.features.row(k) = all.features.row(src);
      s.labels[k] = all.labels[src];
    }
    shards.push_back(std::move(s));
  }
  return shards;
}

/// `stream_seed` (defaults to `seed`) drives only the minibatch order, so replicas
/// can share data and drift while resampling the stochastic gradients.
inline OnlineProblem make_problem(const std::vector<Shard>& shards, const DatasetSpec& spec,
                                  std::uint64_t seed,
                                  std::optional<std::uint64_t> stream_seed = std::nullopt) {
  std::vector<LocalObjective> agents;
  std::vector<MinibatchStream> streams;
  Drift drift = spec.drift;
  drift.seed = derive_seed(seed, 0x6472696674ULL);
  for (std::size_t i = 0; i < shards.size(); ++i) {
    auto sh = std::make_shared<const Shard>(shards[i]);
    agents.emplace_back(sh, spec.loss, spec.r, drift, static_cast<int>(i));
    streams.emplace_back(static_cast<int>(i), sh->size(), spec.batch_size,
                         stream_seed.value_or(seed), spec.cycling);
  }
  return OnlineProblem(std::move(agents), std::move(streams));
}

/// Loads (or synthesizes) and partitions the dataset of `spec` for run seed `seed`.
inline OnlineProblem build_problem(const DatasetSpec& spec, std::uint64_t seed,
                                   const Shard* preloaded = nullptr) {
  switch (spec.kind) {
    case DatasetSpec::Kind::synthetic:
      return make_problem(make_synthetic(spec, seed), spec, seed);
    case DatasetSpec::Kind::libsvm: {
      if (preloaded) return make_problem(partition(*preloaded, spec.agents, spec.cap, seed), spec, seed);
      return make_problem(partition(parse_libsvm(spec.path), spec.agents, spec.cap, seed), spec, seed);
    }
    case DatasetSpec::Kind::idx: {
      if (preloaded) return make_problem(partition(*preloaded, spec.agents, spec.cap, seed), spec, seed);
      return make_problem(partition(parse_idx(spec.path, spec.labels_path), spec.agents, spec.cap, seed),
                          spec, seed);
    }
  }
  throw ConfigError("unknown dataset kind");
}

}  // namespace tvhsgt

#endif  // TVHSGT_DATASET_HPP
