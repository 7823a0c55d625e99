// Command-line front end: run, certify, monitor, replay.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "tvhsgt/experiment.hpp"

namespace {

using namespace tvhsgt;

struct Overrides {
  std::string output;
  int workers = 0;
  long T = 0;
  std::string seeds;
  std::string betas;
  double alpha = 0.0;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--output", o.output, "output directory");
  cmd->add_option("--workers", o.workers, "worker threads");
  cmd->add_option("--T", o.T, "number of rounds");
  cmd->add_option("--seeds", o.seeds, "comma-separated seeds");
  cmd->add_option("--betas", o.betas, "comma-separated beta values");
  cmd->add_option("--alpha", o.alpha, "step size");
}

ExperimentConfig load(const std::string& path, const Overrides& o) {
  ExperimentConfig c = parse_config_file(path);
  if (!o.output.empty()) c.output = o.output;
  if (o.workers > 0) c.workers = o.workers;
  if (o.T != 0) c.T = o.T;
  if (o.alpha != 0.0) c.alpha = o.alpha;
  if (!o.seeds.empty()) {
    c.seeds.clear();
    for (const auto& s : detail::split_list(o.seeds))
      c.seeds.push_back(detail::parse_scalar<std::uint64_t>("--seeds", s));
  }
  if (!o.betas.empty()) {
    c.betas.clear();
    for (const auto& b : detail::split_list(o.betas))
      c.betas.push_back(detail::parse_scalar<double>("--betas", b));
  }
  validate(c);
  return c;
}

void export_graphs(const ExperimentConfig& c, const std::string& path) {
  const TopologyPlan plan = make_topology(c, c.seeds.front());
  std::vector<Digraph> graphs;
  for (long t = 0; t < c.T; ++t) graphs.push_back(plan.graph(t));
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  write_graph_sequence(out, graphs);
}

void print_summary(const ExperimentConfig& c, const ExperimentResult& r) {
  std::cout << "config_hash " << r.config_hash << "  alpha " << r.alpha << "\n";
  for (Method m : c.methods) {
    if (m == Method::tv_hsgt) {
      for (double b : c.betas)
        std::cout << "  " << to_string(m) << " beta=" << b
                  << "  final regret_avg=" << r.mean_final_regret(m, b) << "\n";
    } else {
      std::cout << "  " << to_string(m) << "  final regret_avg=" << r.mean_final_regret(m) << "\n";
    }
  }
  std::cout << "outputs in " << c.output << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized online stochastic optimization over time-varying digraphs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config;
  Overrides o;
  bool verbose = false;

  auto* run = app.add_subcommand("run", "run an experiment and write CSV/summary/manifest");
  run->add_option("config", config, "experiment config file")->required();
  add_overrides(run, o);
  std::string export_path, snapshot_path;
  run->add_option("--export-graphs", export_path, "write the first seed's graph sequence");
  run->add_option("--snapshot", snapshot_path, "write the first cell's final state");
  run->add_flag("-v,--verbose", verbose, "progress output");

  auto* certify = app.add_subcommand("certify", "compute the stability certificate");
  certify->add_option("config", config, "experiment config file")->required();
  add_overrides(certify, o);
  std::string report_path;
  certify->add_option("--report", report_path, "write the report here instead of stdout");

  auto* monitor = app.add_subcommand("monitor", "run the inequality monitors");
  monitor->add_option("config", config, "experiment config file")->required();
  add_overrides(monitor, o);
  std::string mode;
  monitor->add_option("--mode", mode, "monte_carlo or deterministic");

  auto* replay = app.add_subcommand("replay", "rerun an experiment over a recorded graph sequence");
  replay->add_option("config", config, "experiment config file")->required();
  add_overrides(replay, o);
  std::string graphs_path;
  replay->add_option("--graphs", graphs_path, "graph-sequence file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::config);
  }

  try {
    ExperimentHooks hooks;
    if (verbose) hooks.log = [](const std::string& s) { std::cerr << s << "\n"; };

    if (run->parsed()) {
      const ExperimentConfig c = load(config, o);
      if (!export_path.empty()) export_graphs(c, export_path);
      const ExperimentResult r = run_experiment(c, hooks);
      if (!snapshot_path.empty()) {
        std::ofstream out(snapshot_path, std::ios::binary);
        if (!out) throw Error("cannot write '" + snapshot_path + "'");
        save_snapshot(out, r.cells.front().final_state);
      }
      print_summary(c, r);
    } else if (certify->parsed()) {
      const ExperimentConfig c = load(config, o);
      const Environment env = make_environment(c, c.seeds.front());
      const auto bundle = certify_environment(env, c.betas.front(), c.T, c.seeds.front());
      std::ostringstream rep;
      write_certificate_report(rep, bundle.cert);
      rep << "\n[loss_profile]\nL_g = " << bundle.profile.L_g << "\nmu = " << bundle.profile.mu
          << "\nsigma2 = " << bundle.profile.sigma2 << "\n";
      if (report_path.empty()) {
        std::cout << rep.str();
      } else {
        std::ofstream out(report_path);
        out << rep.str();
      }
    } else if (monitor->parsed()) {
      ExperimentConfig c = load(config, o);
      c.monitor = true;
      c.shared_environment = true;
      c.certified_alpha = true;
      c.methods = {Method::tv_hsgt};
      if (mode == "deterministic") c.monitor_mode = MonitorMode::deterministic;
      else if (mode == "monte_carlo") c.monitor_mode = MonitorMode::monte_carlo;
      else if (!mode.empty()) throw ConfigError("--mode: expected monte_carlo or deterministic");
      const ExperimentResult r = run_experiment(c, hooks);
      write_monitor_report(std::cout, *r.monitor);
    } else if (replay->parsed()) {
      ExperimentConfig c = load(config, o);
      c.topology.replay_path = graphs_path;
      const ExperimentResult r = run_experiment(c, hooks);
      print_summary(c, r);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::failure);
  }
  return 0;
}
