#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "flsim/experiment.hpp"
#include "flsim/parallel.hpp"

namespace {

using nlohmann::json;

json read_json(const std::string& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw flsim::ConfigError("cannot open " + what + " '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw flsim::ConfigError(what + " '" + path + "' is not valid JSON: " + e.what());
  }
}

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  int threads = 0;
};

flsim::ExperimentConfig load(const std::string& path, const Globals& g) {
  flsim::ExperimentConfig cfg = flsim::parse_config(read_json(path, "config file"));
  if (g.seed) cfg.seeds = {*g.seed};
  if (g.out) cfg.output_dir = *g.out;
  return cfg;
}

int threads_of(const Globals& g) { return g.threads > 0 ? g.threads : flsim::default_threads(); }

void print_summary(const flsim::RunResult& r) {
  std::cout << "overall_acc=" << r.metrics.overall_acc << " mean_per_class_acc=" << r.metrics.mean_per_class_acc
            << " attack_impact=" << r.metrics.attack_impact;
  if (r.metrics.detection)
    std::cout << " fpr=" << r.metrics.detection->fpr << " fnr=" << r.metrics.detection->fnr
              << " detection_round=" << r.metrics.detection->detection_round;
  if (r.recovered_metrics) std::cout << " recovered_acc=" << r.recovered_metrics->overall_acc;
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning poisoning attack and defense simulator"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed_value = 0;
  std::string out_value;
  auto* seed_opt = app.add_option("--seed", seed_value, "Override the master seed")->type_name("U64");
  auto* out_opt = app.add_option("--out", out_value, "Override the output directory");
  app.add_option("--threads", g.threads, "Worker threads (default: FLSIM_THREADS or 1)")
      ->check(CLI::PositiveNumber);

  std::string config, grid, history;

  auto* run = app.add_subcommand("run", "Train one experiment and write its outputs");
  run->add_option("config", config, "Experiment config (JSON)")->required();

  auto* detect = app.add_subcommand("detect", "Train with the detector enabled");
  detect->add_option("config", config, "Experiment config (JSON)")->required();

  auto* sweep = app.add_subcommand("sweep", "Run a grid of configs and write sweep.csv");
  sweep->add_option("config", config, "Base experiment config (JSON)")->required();
  sweep->add_option("--grid", grid, "Grid file: JSON object of dotted keys to value lists")->required();

  auto* recover = app.add_subcommand("recover", "Recover a global model from a saved history");
  recover->add_option("config", config, "Experiment config (JSON)")->required();
  recover->add_option("--history", history, "History file written by 'run'")->required();

  auto* stats = app.add_subcommand("stats", "Write per-client heterogeneity statistics");
  stats->add_option("config", config, "Experiment config (JSON)")->required();

  auto* hist = app.add_subcommand("history", "Inspect history files");
  hist->require_subcommand(1);
  hist->fallthrough();
  auto* hist_stats = hist->add_subcommand("stats", "Print the size and shape of a history file");
  hist_stats->add_option("file", history, "History file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (*seed_opt) g.seed = seed_value;
  if (*out_opt) g.out = out_value;

  try {
    const int threads = threads_of(g);
    if (run->parsed() || detect->parsed()) {
      flsim::ExperimentConfig cfg = load(config, g);
      if (detect->parsed()) {
        cfg.detector_enabled = true;
        if (cfg.fl.selection != flsim::Selection::kCrossSilo)
          throw flsim::ConfigError("detector requires fl.selection = cross_silo");
      }
      for (const auto& r : flsim::run_experiment(cfg, cfg.output_dir, threads)) print_summary(r);
    } else if (sweep->parsed()) {
      json base = read_json(config, "config file");
      if (g.seed) {
        base.erase("seeds");
        base["seed"] = *g.seed;
      }
      const std::string out = g.out ? *g.out : flsim::parse_config(base).output_dir;
      const int rows = flsim::run_sweep(base, read_json(grid, "grid file"), out, threads);
      std::cout << "wrote " << rows << " rows to " << (std::filesystem::path(out) / "sweep.csv").string() << '\n';
    } else if (recover->parsed()) {
      const flsim::ExperimentConfig cfg = load(config, g);
      if (!std::filesystem::exists(history)) throw flsim::ConfigError("history file '" + history + "' not found");
      print_summary(flsim::run_recover(cfg, cfg.seeds.front(), history, cfg.output_dir, threads));
    } else if (stats->parsed()) {
      const flsim::ExperimentConfig cfg = load(config, g);
      const auto s = flsim::build_setup(cfg, cfg.seeds.front(), threads);
      const auto st = flsim::heterogeneity_stats(s.shards, s.ds);
      std::filesystem::create_directories(cfg.output_dir);
      const auto path = std::filesystem::path(cfg.output_dir) / "client_stats.csv";
      std::ofstream f(path);
      flsim::write_stats_csv(f, st);
      std::cout << "wrote " << path.string() << '\n';
    } else if (hist_stats->parsed()) {
      if (!std::filesystem::exists(history)) throw flsim::ConfigError("history file '" + history + "' not found");
      const auto st = flsim::history_file_stats(history);
      std::cout << "file_bytes=" << st.file_bytes << " dim=" << st.dim << " num_clients=" << st.num_clients
                << " rounds=" << st.rounds << " updates=" << st.updates << '\n';
    }
  } catch (const flsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
