#ifndef TVHSGT_EXPERIMENT_HPP
#define TVHSGT_EXPERIMENT_HPP

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tvhsgt/algorithms.hpp"
#include "tvhsgt/analysis.hpp"
#include "tvhsgt/dataset.hpp"
#include "tvhsgt/metrics.hpp"
#include "tvhsgt/network.hpp"

namespace tvhsgt {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kConfigVersion = 1;

struct TopologySpec {
  std::string base = "complete";  // complete | ring | bidirectional_ring | static_complete | ...
  double keep_prob = 0.5;         // < 1 samples round graphs from the base
  std::string replay_path;        // graph-sequence file, overrides base when set
};

struct ExperimentConfig {
  DatasetSpec dataset;
  TopologySpec topology;
  std::vector<Method> methods = {Method::tv_hsgt};
  long T = 2000;
  double alpha = 0.001;
  std::vector<double> betas = {0.01};
  double momentum = 0.9;
  std::vector<std::uint64_t> seeds = {1};
  std::string output = "out";
  int workers = 1;
  bool regularity = false;  // q_t and p_t columns
  bool svg = false;
  bool certificate = false;
  bool monitor = false;
  MonitorMode monitor_mode = MonitorMode::monte_carlo;
  bool shared_environment = false;  // seeds vary only the sampling stream
  bool certified_alpha = false;     // replace alpha by the certified step size

  int agents() const noexcept { return dataset.agents; }
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s + ",") {
    if (ch == ',' || ch == ' ' || ch == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  return out;
}

template <class T>
T parse_scalar(const std::string& path, const std::string& text) {
  T v{};
  const char* b = text.data();
  const char* e = b + text.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e)
    throw ConfigError(path + ": cannot parse '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& path, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(path + ": expected a boolean, got '" + text + "'");
}

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  if (c.T < 1) throw ConfigError("run.T: must be at least 1");
  if (c.seeds.empty()) throw ConfigError("run.seeds: must not be empty");
  if (c.dataset.agents < 2) throw ConfigError("dataset.agents: need at least 2 agents");
  if (c.methods.empty()) throw ConfigError("algorithm.methods: must not be empty");
  if (c.betas.empty()) throw ConfigError("algorithm.betas: must not be empty");
  for (double b : c.betas)
    if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("algorithm.betas: every beta must lie in [0,1]");
  if (!(c.alpha > 0.0) || !std::isfinite(c.alpha)) throw ConfigError("algorithm.alpha: must be positive");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError("algorithm.momentum: must lie in [0,1)");
  if (!(c.topology.keep_prob > 0.0 && c.topology.keep_prob <= 1.0))
    throw ConfigError("topology.keep_prob: must lie in (0,1]");
  static const std::set<std::string> bases = {"complete", "ring", "bidirectional_ring"};
  if (c.topology.replay_path.empty() && !bases.count(c.topology.base))
    throw ConfigError("topology.base: unknown base graph '" + c.topology.base + "'");
  if (c.dataset.batch_size < 1) throw ConfigError("dataset.batch_size: must be at least 1");
  if (!(c.dataset.r >= 0.0)) throw ConfigError("dataset.r: must be nonnegative");
  if (c.workers < 1) throw ConfigError("run.workers: must be at least 1");
  if (c.dataset.kind == DatasetSpec::Kind::synthetic && c.dataset.batch_size > c.dataset.samples_per_agent)
    throw ConfigError("dataset.batch_size: exceeds dataset.samples_per_agent");
  if (c.dataset.kind != DatasetSpec::Kind::synthetic && c.dataset.path.empty())
    throw ConfigError("dataset.path: required for file datasets");
  if (c.dataset.kind == DatasetSpec::Kind::idx && c.dataset.labels_path.empty())
    throw ConfigError("dataset.labels: required for idx datasets");
  if (c.dataset.drift.label_flip != 0.0 && c.dataset.loss != LossKind::binary_logistic)
    throw ConfigError("dataset.drift_label_flip: only valid for the logistic loss");
  if (c.dataset.drift.label_shift != 0.0 && c.dataset.loss != LossKind::quadratic)
    throw ConfigError("dataset.drift_label_shift: only valid for the quadratic loss");
  if (c.monitor && !c.shared_environment)
    throw ConfigError("run.monitor: requires run.shared_environment = true so replicas share one environment");
  if (c.monitor && c.monitor_mode == MonitorMode::monte_carlo && c.seeds.size() < 20)
    throw ConfigError("run.seeds: monte-carlo monitors need at least 20 seeds");
  if (!(c.dataset.drift.label_flip >= 0.0 && c.dataset.drift.label_flip <= 1.0))
    throw ConfigError("dataset.drift_label_flip: must lie in [0,1]");
}

/// Reads the sectioned key-value format. Unknown keys are rejected with their path.
inline ExperimentConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  ExperimentConfig c;
  using detail::parse_bool;
  using detail::parse_scalar;
  bool saw_version = false;
  for (const auto& [key, node] : tree) {
    if (node.empty()) {
      if (key != "version") throw ConfigError(key + ": unknown top-level key");
      if (parse_scalar<int>("version", node.data()) != kConfigVersion)
        throw ConfigError("version: unsupported config version " + node.data());
      saw_version = true;
      continue;
    }
    for (const auto& [field, leaf] : node) {
      const std::string path = key + "." + field;
      const std::string v = leaf.data();
      auto& d = c.dataset;
      if (key == "dataset") {
        if (field == "kind") {
          if (v == "synthetic") d.kind = DatasetSpec::Kind::synthetic;
          else if (v == "libsvm") d.kind = DatasetSpec::Kind::libsvm;
          else if (v == "idx") d.kind = DatasetSpec::Kind::idx;
          else throw ConfigError(path + ": unknown dataset kind '" + v + "'");
        } else if (field == "path") d.path = v;
        else if (field == "labels") d.labels_path = v;
        else if (field == "loss") {
          try {
            d.loss = parse_loss_kind(v);
          } catch (const ConfigError&) {
            throw ConfigError(path + ": unknown loss '" + v + "'");
          }
        } else if (field == "agents") d.agents = parse_scalar<int>(path, v);
        else if (field == "batch_size") d.batch_size = parse_scalar<long>(path, v);
        else if (field == "r") d.r = parse_scalar<double>(path, v);
        else if (field == "cycling") d.cycling = parse_bool(path, v);
        else if (field == "cap") d.cap = parse_scalar<long>(path, v);
        else if (field == "dim") d.dim = parse_scalar<long>(path, v);
        else if (field == "samples_per_agent") d.samples_per_agent = parse_scalar<long>(path, v);
        else if (field == "feature_scale") d.feature_scale = parse_scalar<double>(path, v);
        else if (field == "heterogeneity") d.heterogeneity = parse_scalar<double>(path, v);
        else if (field == "noise") d.noise = parse_scalar<double>(path, v);
        else if (field == "drift_rotation") d.drift.rotation = parse_scalar<double>(path, v);
        else if (field == "drift_label_shift") d.drift.label_shift = parse_scalar<double>(path, v);
        else if (field == "drift_label_flip") d.drift.label_flip = parse_scalar<double>(path, v);
        else throw ConfigError(path + ": unknown key");
      } else if (key == "topology") {
        if (field == "base") c.topology.base = v;
        else if (field == "keep_prob") c.topology.keep_prob = parse_scalar<double>(path, v);
        else if (field == "replay") c.topology.replay_path = v;
        else throw ConfigError(path + ": unknown key");
      } else if (key == "algorithm") {
        if (field == "methods") {
          c.methods.clear();
          for (const auto& m : detail::split_list(v)) {
            try {
              c.methods.push_back(parse_method(m));
            } catch (const ConfigError&) {
              throw ConfigError(path + ": unknown method '" + m + "'");
            }
          }
        } else if (field == "alpha") c.alpha = parse_scalar<double>(path, v);
        else if (field == "certified_alpha") c.certified_alpha = parse_bool(path, v);
        else if (field == "betas" || field == "beta") {
          c.betas.clear();
          for (const auto& b : detail::split_list(v)) c.betas.push_back(parse_scalar<double>(path, b));
        } else if (field == "momentum") c.momentum = parse_scalar<double>(path, v);
        else throw ConfigError(path + ": unknown key");
      } else if (key == "run") {
        if (field == "T") c.T = parse_scalar<long>(path, v);
        else if (field == "seeds") {
          c.seeds.clear();
          for (const auto& s : detail::split_list(v)) c.seeds.push_back(parse_scalar<std::uint64_t>(path, s));
        } else if (field == "output") c.output = v;
        else if (field == "workers") c.workers = parse_scalar<int>(path, v);
        else if (field == "regularity") c.regularity = parse_bool(path, v);
        else if (field == "svg") c.svg = parse_bool(path, v);
        else if (field == "certificate") c.certificate = parse_bool(path, v);
        else if (field == "monitor") c.monitor = parse_bool(path, v);
        else if (field == "monitor_mode") {
          if (v == "monte_carlo") c.monitor_mode = MonitorMode::monte_carlo;
          else if (v == "deterministic") c.monitor_mode = MonitorMode::deterministic;
          else throw ConfigError(path + ": expected monte_carlo or deterministic");
        } else if (field == "shared_environment") c.shared_environment = parse_bool(path, v);
        else throw ConfigError(path + ": unknown key");
      } else {
        throw ConfigError(key + ": unknown section");
      }
    }
  }
  if (!saw_version) throw ConfigError("version: missing config version");
  validate(c);
  return c;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_config(in);
}

/// Canonical serialization; parse_config(to_ini(c)) reproduces c.
inline std::string to_ini(const ExperimentConfig& c) {
  using detail::format_double;
  std::ostringstream os;
  const auto& d = c.dataset;
  const char* kinds[] = {"synthetic", "libsvm", "idx"};
  os << "version = " << kConfigVersion << "\n\n[dataset]\nkind = " << kinds[static_cast<int>(d.kind)]
     << "\n";
  if (!d.path.empty()) os << "path = " << d.path << "\n";
  if (!d.labels_path.empty()) os << "labels = " << d.labels_path << "\n";
  os << "loss = " << to_string(d.loss) << "\nagents = " << d.agents
     << "\nbatch_size = " << d.batch_size << "\nr = " << format_double(d.r)
     << "\ncycling = " << (d.cycling ? "true" : "false") << "\ncap = " << d.cap
     << "\ndim = " << d.dim << "\nsamples_per_agent = " << d.samples_per_agent
     << "\nfeature_scale = " << format_double(d.feature_scale)
     << "\nheterogeneity = " << format_double(d.heterogeneity)
     << "\nnoise = " << format_double(d.noise)
     << "\ndrift_rotation = " << format_double(d.drift.rotation)
     << "\ndrift_label_shift = " << format_double(d.drift.label_shift)
     << "\ndrift_label_flip = " << format_double(d.drift.label_flip) << "\n";
  os << "\n[topology]\nbase = " << c.topology.base
     << "\nkeep_prob = " << format_double(c.topology.keep_prob) << "\n";
  if (!c.topology.replay_path.empty()) os << "replay = " << c.topology.replay_path << "\n";
  os << "\n[algorithm]\nmethods =";
  for (std::size_t k = 0; k < c.methods.size(); ++k) os << (k ? ", " : " ") << to_string(c.methods[k]);
  os << "\nalpha = " << format_double(c.alpha)
     << "\ncertified_alpha = " << (c.certified_alpha ? "true" : "false") << "\nbetas =";
  for (std::size_t k = 0; k < c.betas.size(); ++k) os << (k ? ", " : " ") << format_double(c.betas[k]);
  os << "\nmomentum = " << format_double(c.momentum) << "\n";
  os << "\n[run]\nT = " << c.T << "\nseeds =";
  for (std::size_t k = 0; k < c.seeds.size(); ++k) os << (k ? ", " : " ") << c.seeds[k];
  os << "\noutput = " << c.output << "\nworkers = " << c.workers
     << "\nregularity = " << (c.regularity ? "true" : "false")
     << "\nsvg = " << (c.svg ? "true" : "false")
     << "\ncertificate = " << (c.certificate ? "true" : "false")
     << "\nmonitor = " << (c.monitor ? "true" : "false")
     << "\nmonitor_mode = " << to_string(c.monitor_mode)
     << "\nshared_environment = " << (c.shared_environment ? "true" : "false") << "\n";
  return os.str();
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Hash of the canonical config with the output directory blanked, so moving
/// the output location does not change the identity of an experiment.
inline std::string config_hash(const ExperimentConfig& c) {
  ExperimentConfig k = c;
  k.output.clear();
  k.workers = 1;
  return hex64(fnv1a(to_ini(k)));
}

// ---------------------------------------------------------------------------
// Environment construction

inline Digraph base_graph(const std::string& kind, int n) {
  if (kind == "complete") return Digraph::complete(n);
  if (kind == "ring") return Digraph::ring(n);
  if (kind == "bidirectional_ring") return Digraph::bidirectional_ring(n);
  throw ConfigError("topology.base: unknown base graph '" + kind + "'");
}

inline TopologyPlan make_topology(const ExperimentConfig& c, std::uint64_t seed) {
  if (!c.topology.replay_path.empty()) {
    std::ifstream in(c.topology.replay_path);
    if (!in) throw IngestionError("cannot open graph sequence '" + c.topology.replay_path + "'");
    auto graphs = read_graph_sequence(in);
    if (graphs.empty()) throw IngestionError("graph sequence is empty");
    if (graphs.front().size() != c.agents())
      throw ConfigError("topology.replay: graph size differs from dataset.agents");
    return TopologyPlan::replay(std::move(graphs));
  }
  const Digraph base = base_graph(c.topology.base, c.agents());
  if (c.topology.keep_prob >= 1.0) return TopologyPlan::fixed(base);
  return TopologyPlan::random(base, c.topology.keep_prob, derive_seed(seed, 0x746f706fULL));
}

/// Everything a seed's runs share: problem, topology and cached optima.
struct Environment {
  std::uint64_t seed = 0;
  std::shared_ptr<OnlineProblem> problem;
  std::shared_ptr<TopologyPlan> plan;
  std::vector<Eigen::VectorXd> optima;  // 0..T+1
};

inline Environment make_environment(const ExperimentConfig& c, std::uint64_t seed,
                                    const Shard* preloaded = nullptr) {
  Environment env;
  env.seed = seed;
  const std::uint64_t world = c.shared_environment ? c.seeds.front() : seed;
  if (c.dataset.kind == DatasetSpec::Kind::synthetic) {
    env.problem = std::make_shared<OnlineProblem>(
        make_problem(make_synthetic(c.dataset, world), c.dataset, world, seed));
  } else {
    Shard loaded;
    if (!preloaded) {
      loaded = c.dataset.kind == DatasetSpec::Kind::libsvm
                   ? parse_libsvm(c.dataset.path)
                   : parse_idx(c.dataset.path, c.dataset.labels_path);
      preloaded = &loaded;
    }
    env.problem = std::make_shared<OnlineProblem>(make_problem(
        partition(*preloaded, c.agents(), c.dataset.cap, world), c.dataset, world, seed));
  }
  env.plan = std::make_shared<TopologyPlan>(make_topology(c, world));
  env.optima = compute_optima(*env.problem, c.T + 2);
  return env;
}

/// Curvature and noise constants. The noise bound must hold along the whole run,
/// so sigma2 is the largest estimate over the start point and optima spread
/// across the horizon.
inline LossProfile environment_constants(const Environment& env, std::uint64_t seed,
                                         int samples = 1000) {
  LossProfile out = estimate_problem_constants(*env.problem, env.optima.front(), seed, samples);
  const std::size_t last = env.optima.size() - 1;
  std::vector<Eigen::VectorXd> points{Eigen::VectorXd::Zero(env.problem->dim())};
  for (std::size_t k : {last / 2, last}) points.push_back(env.optima[k]);
  for (const auto& x : points)
    out.sigma2 = std::max(out.sigma2, estimate_problem_constants(*env.problem, x, seed, samples).sigma2);
  return out;
}

struct CertificateBundle {
  StabilityCertificate cert;
  LossProfile profile;
};

inline CertificateBundle certify_environment(const Environment& env, double beta, long T,
                                             std::uint64_t seed) {
  CertificateBundle out;
  out.profile = environment_constants(env, seed);
  const long horizon = env.plan->is_static() ? std::min<long>(T, 200) : T;
  const auto params = measure_contraction(*env.plan, std::max<long>(horizon, 1));
  out.cert = certify_step_size(params, env.problem->agents(), out.profile.mu, out.profile.L_g, beta);
  out.cert.steady_state =
      corollary1_steady_state(out.cert, beta, out.profile.sigma2, env.problem->agents());
  return out;
}

// ---------------------------------------------------------------------------
// Output helpers

/// Writes via a temporary file and rename so readers never see partial output.
inline void write_atomically(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp + "'");
    out << content;
    if (!out) throw Error("write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

struct Series {
  std::string label;
  std::vector<double> y;  // indexed by round 1..len
};

/// Self-contained SVG line chart; log scale drops nonpositive points.
inline std::string svg_chart(const std::string& title, const std::vector<Series>& series,
                             bool log_y) {
  constexpr double W = 720, H = 420, ml = 70, mr = 160, mt = 40, mb = 50;
  double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  std::size_t len = 0;
  auto tr = [&](double v) { return log_y ? std::log10(v) : v; };
  for (const auto& s : series) {
    len = std::max(len, s.y.size());
    for (double v : s.y) {
      if (!std::isfinite(v) || (log_y && v <= 0.0)) continue;
      ymin = std::min(ymin, tr(v));
      ymax = std::max(ymax, tr(v));
    }
  }
  if (!(ymin <= ymax)) ymin = 0.0, ymax = 1.0;
  if (ymax - ymin < 1e-12) ymax = ymin + 1.0;
  const double xs = (W - ml - mr) / std::max<double>(1.0, static_cast<double>(len) - 1.0);
  auto px = [&](std::size_t k) { return ml + xs * static_cast<double>(k); };
  auto py = [&](double v) { return H - mb - (tr(v) - ymin) / (ymax - ymin) * (H - mt - mb); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                 "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" "
        "fill=\"white\"/>\n<text x=\""
     << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\"" << H - mb
     << "\" stroke=\"black\"/>\n<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
     << "\" y2=\"" << H - mb << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = ymin + (ymax - ymin) * k / 4.0;
    const double y = H - mb - (H - mt - mb) * k / 4.0;
    os << "<text x=\"" << ml - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">"
       << (log_y ? "1e" : "") << std::setprecision(log_y ? 3 : 4) << v << "</text>\n";
  }
  os << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 15
     << "\" text-anchor=\"middle\">round t (1.." << len << ")</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* col = colors[s % 8];
    os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
    const std::size_t stride = std::max<std::size_t>(1, series[s].y.size() / 1000);
    for (std::size_t k = 0; k < series[s].y.size(); k += stride) {
      const double v = series[s].y[k];
      if (!std::isfinite(v) || (log_y && v <= 0.0)) continue;
      os << px(k) << ',' << py(v) << ' ';
    }
    os << "\"/>\n<text x=\"" << W - mr + 10 << "\" y=\"" << mt + 16 * (s + 1) << "\" fill=\"" << col
       << "\">" << series[s].label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Orchestration

struct CellResult {
  Method method = Method::tv_hsgt;
  double beta = 0.0;  // NaN for baselines
  std::uint64_t seed = 0;
  std::string file;
  std::vector<RoundMetrics> metrics;
  NetworkState final_state;
  double final_regret_avg() const { return metrics.empty() ? 0.0 : metrics.back().regret_avg; }
};

struct ExperimentResult {
  std::string config_hash;
  double alpha = 0.0;  // step size actually used
  std::vector<CellResult> cells;
  std::optional<CertificateBundle> certificate;
  std::optional<MonitorReport> monitor;
  std::vector<std::string> files;

  /// Seed-mean final time-averaged regret of one (method, beta) curve.
  double mean_final_regret(Method m, double beta = std::numeric_limits<double>::quiet_NaN()) const {
    double s = 0.0;
    int k = 0;
    for (const auto& c : cells)
      if (c.method == m && (m != Method::tv_hsgt || c.beta == beta)) {
        s += c.final_regret_avg();
        ++k;
      }
    if (k == 0) throw ConfigError("no cells for the requested curve");
    return s / k;
  }
};

inline std::string cell_name(Method m, double beta, std::uint64_t seed) {
  std::string name = to_string(m);
  if (m == Method::tv_hsgt) name += "_beta" + detail::format_double(beta);
  return name + "_seed" + std::to_string(seed) + ".csv";
}

/// Runs `fn(k)` for k in [0, count) on at most `workers` threads; rethrows the
/// lowest-index failure after all jobs finish.
template <class Fn>
void parallel_for(std::size_t count, int workers, Fn fn) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < count;) {
      try {
        fn(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || count <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(threads, count); ++w) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct ExperimentHooks {
  std::function<void(const std::string&)> log;  // progress lines, may be empty
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentHooks& hooks = {}) {
  validate(cfg);
  namespace fs = std::filesystem;
  const fs::path outdir(cfg.output);
  fs::create_directories(outdir);
  auto log = [&](const std::string& s) {
    if (hooks.log) hooks.log(s);
  };

  ExperimentResult res;
  res.config_hash = config_hash(cfg);
  res.alpha = cfg.alpha;

  std::optional<Shard> preloaded;
  if (cfg.dataset.kind == DatasetSpec::Kind::libsvm) preloaded = parse_libsvm(cfg.dataset.path);
  if (cfg.dataset.kind == DatasetSpec::Kind::idx)
    preloaded = parse_idx(cfg.dataset.path, cfg.dataset.labels_path);
  const Shard* shard = preloaded ? &*preloaded : nullptr;

  const bool wants_tv = std::find(cfg.methods.begin(), cfg.methods.end(), Method::tv_hsgt) !=
                        cfg.methods.end();
  if (cfg.certificate || cfg.certified_alpha || cfg.monitor) {
    const Environment env0 = make_environment(cfg, cfg.seeds.front(), shard);
    res.certificate = certify_environment(env0, cfg.betas.front(), cfg.T, cfg.seeds.front());
    std::ostringstream rep;
    write_certificate_report(rep, res.certificate->cert);
    rep << "\n[loss_profile]\nL_g = " << res.certificate->profile.L_g
        << "\nmu = " << res.certificate->profile.mu
        << "\nsigma2 = " << res.certificate->profile.sigma2 << "\n";
    write_atomically(outdir / "certificate.txt", rep.str());
    res.files.push_back("certificate.txt");
    if (cfg.certified_alpha) res.alpha = res.certificate->cert.alpha;
    log("certificate: alpha=" + detail::format_double(res.certificate->cert.alpha) +
        " rho=" + detail::format_double(res.certificate->cert.rho));
  }

  // One job per seed: the environment (and its optima) is shared by all cells.
  struct Job {
    std::vector<CellResult> cells;
    std::vector<TraceRow> trace;
  };
  std::vector<Job> jobs(cfg.seeds.size());
  std::mutex log_mu;
  parallel_for(cfg.seeds.size(), cfg.workers, [&](std::size_t k) {
    const std::uint64_t seed = cfg.seeds[k];
    const Environment env = make_environment(cfg, seed, shard);
    for (Method m : cfg.methods) {
      const std::vector<double> betas =
          m == Method::tv_hsgt ? cfg.betas : std::vector<double>{std::numeric_limits<double>::quiet_NaN()};
      for (double beta : betas) {
        AlgoConfig ac;
        ac.method = m;
        ac.alpha = res.alpha;
        ac.beta = std::isnan(beta) ? 1.0 : beta;
        ac.momentum = cfg.momentum;
        RunOptions ro;
        ro.T = cfg.T;
        ro.seed = seed;
        ro.regularity = cfg.regularity;
        ro.record_trace = cfg.monitor && m == Method::tv_hsgt && beta == cfg.betas.front();
        RunResult run = run_horizon(ac, *env.plan, *env.problem, ro, &env.optima);
        CellResult cell;
        cell.method = m;
        cell.beta = beta;
        cell.seed = seed;
        cell.file = cell_name(m, beta, seed);
        cell.metrics = std::move(run.metrics);
        cell.final_state = std::move(run.final);
        std::ostringstream csv;
        write_metrics_csv(csv, cell.metrics);
        write_atomically(outdir / cell.file, csv.str());
        if (ro.record_trace) jobs[k].trace = std::move(run.trace);
        jobs[k].cells.push_back(std::move(cell));
        std::lock_guard lock(log_mu);
        log("done " + jobs[k].cells.back().file);
      }
    }
  });
  for (auto& j : jobs)
    for (auto& c : j.cells) {
      res.files.push_back(c.file);
      res.cells.push_back(std::move(c));
    }

  // Seed-averaged curves.
  std::ostringstream sum;
  sum << "method,beta," << kMetricsHeader << '\n';
  std::vector<std::pair<std::string, std::vector<RoundMetrics>>> curves;
  for (Method m : cfg.methods) {
    const std::vector<double> betas =
        m == Method::tv_hsgt ? cfg.betas : std::vector<double>{std::numeric_limits<double>::quiet_NaN()};
    for (double beta : betas) {
      std::vector<RoundMetrics> mean(static_cast<std::size_t>(cfg.T));
      int count = 0;
      for (const auto& c : res.cells) {
        if (c.method != m || !(m != Method::tv_hsgt || c.beta == beta)) continue;
        ++count;
        for (std::size_t t = 0; t < mean.size(); ++t) {
          const auto& r = c.metrics[t];
          auto& a = mean[t];
          a.t = r.t;
          a.regret_inc += r.regret_inc;
          a.regret_avg += r.regret_avg;
          a.consensus2 += r.consensus2;
          a.tracking2 += r.tracking2;
          a.opt2 += r.opt2;
          a.gradest2 += r.gradest2;
          a.q_t = (count == 1 ? 0.0 : a.q_t) + r.q_t;
          a.p_t = (count == 1 ? 0.0 : a.p_t) + r.p_t;
          a.loss += r.loss;
          a.accuracy = (count == 1 ? 0.0 : a.accuracy) + r.accuracy;
        }
      }
      for (auto& a : mean) {
        for (double* f : {&a.regret_inc, &a.regret_avg, &a.consensus2, &a.tracking2, &a.opt2,
                          &a.gradest2, &a.q_t, &a.p_t, &a.loss, &a.accuracy})
          *f /= count;
      }
      const std::string label = to_string(m) + (m == Method::tv_hsgt ? " b=" + detail::format_double(beta) : "");
      for (const auto& a : mean) {
        sum << to_string(m) << ',' << (m == Method::tv_hsgt ? detail::format_double(beta) : "") << ',';
        write_metrics_row(sum, a);
      }
      curves.emplace_back(label, std::move(mean));
    }
  }
  write_atomically(outdir / "summary.csv", sum.str());
  res.files.push_back("summary.csv");

  if (cfg.svg) {
    struct Chart {
      const char* name;
      double RoundMetrics::*field;
      bool log_y;
    };
    for (const Chart ch : {Chart{"regret_avg", &RoundMetrics::regret_avg, true},
                           Chart{"opt2", &RoundMetrics::opt2, true},
                           Chart{"consensus2", &RoundMetrics::consensus2, true},
                           Chart{"loss", &RoundMetrics::loss, false}}) {
      std::vector<Series> series;
      for (const auto& [label, mean] : curves) {
        Series s{label, {}};
        for (const auto& a : mean) s.y.push_back(a.*(ch.field));
        series.push_back(std::move(s));
      }
      const std::string file = std::string("chart_") + ch.name + ".svg";
      write_atomically(outdir / file, svg_chart(ch.name, series, ch.log_y));
      res.files.push_back(file);
    }
  }

  if (cfg.monitor && wants_tv) {
    std::vector<std::vector<TraceRow>> traces;
    for (auto& j : jobs)
      if (!j.trace.empty()) traces.push_back(std::move(j.trace));
    const auto& cb = *res.certificate;
    MonitorInputs mi;
    mi.alpha = res.alpha;
    mi.beta = cfg.betas.front();
    mi.mu = cb.profile.mu;
    mi.L = cb.profile.L_g;
    mi.sigma2 = cb.profile.sigma2;
    mi.zeta0 = cb.cert.zeta0;
    mi.n = cfg.agents();
    const Environment env0 = make_environment(cfg, cfg.seeds.front(), shard);
    mi.params = measure_contraction(*env0.plan, cfg.T);
    mi.M = build_M(res.alpha, mi.beta, mi.params, mi.n, mi.mu, mi.L, mi.zeta0).M;
    res.monitor = lemma_monitors(traces, mi, cfg.monitor_mode);
    std::ostringstream rep;
    write_monitor_report(rep, *res.monitor);
    write_atomically(outdir / "monitors.txt", rep.str());
    res.files.push_back("monitors.txt");
  }

  // Manifest: config identity, seeds, version and a hash of every output file.
  std::ostringstream man;
  man << "[manifest]\nversion = " << kVersion << "\nconfig_hash = " << res.config_hash
      << "\nalpha_used = " << detail::format_double(res.alpha) << "\nseeds =";
  for (auto s : cfg.seeds) man << ' ' << s;
  man << "\n\n[files]\n";
  for (const auto& f : res.files) {
    std::ifstream in(outdir / f, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    man << f << " = " << hex64(fnv1a(bytes)) << "\n";
  }
  man << "\n[config]\n" << to_ini(cfg);
  write_atomically(outdir / "manifest.txt", man.str());
  return res;
}

}  // namespace tvhsgt

#endif  // TVHSGT_EXPERIMENT_HPP
