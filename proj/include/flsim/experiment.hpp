#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flsim/attacks.hpp"
#include "flsim/data.hpp"
#include "flsim/fedrecover.hpp"
#include "flsim/fldetector.hpp"
#include "flsim/metrics.hpp"
#include "flsim/runtime.hpp"

namespace flsim {

/// Raised for configuration problems (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | csv
  int num_classes = 10;
  int per_class = 100;
  int input_dim = 10;
  double sep = 5.0;
  std::string path;
  int client_id_column = -1;
  std::vector<double> keep;  // optional per-class imbalance fractions
};

enum class BenignSource { kTruth, kDetector };

struct RecoverySection {
  bool enabled = false;
  RecoveryConfig config;
  BenignSource source = BenignSource::kTruth;
  /// Injected misdetection: this fraction of malicious clients escapes and
  /// the same fraction of benign clients is dropped (FNR = FPR = rate).
  double inject_rate = 0.0;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  PartitionSpec partition;
  ModelSpec model_shape;  // input_dim / num_classes filled from the data
  FLConfig fl;
  AggregatorSpec agr;
  AttackSpec attack;
  bool detector_enabled = false;
  DetectorConfig detector;
  RecoverySection recovery;
  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = "out";
  bool save_history = false;
};

/// Strict parse: unknown keys and invalid values raise ConfigError.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

/// A materialized experiment for one seed.
struct Setup {
  Dataset ds;
  Shards shards;
  Federation fed;
  std::set<ClientId> malicious;
  ParamVector initial;
  std::uint64_t seed = 0;
};

Setup build_setup(const ExperimentConfig& cfg, std::uint64_t seed, int threads = 1);

/// Adversary for a setup, or a benign one for attack kind None.
Adversary make_adversary(const ExperimentConfig& cfg, const Setup& setup);

/// Believed-benign set with misdetection injected at `rate`.
std::set<ClientId> inject_misdetection(const std::set<ClientId>& clients,
                                       const std::set<ClientId>& malicious, double rate,
                                       std::uint64_t seed);

struct RoundLog {
  int round;
  double train_loss;
  double overall_acc;
};

struct RunResult {
  MetricsReport metrics;
  double benign_accuracy = 0.0;
  std::vector<RoundLog> rounds;
  TrainingHistory history;
  std::optional<DetectionRun> detection;
  std::optional<RecoveryState> recovery;
  std::optional<MetricsReport> recovered_metrics;
  nlohmann::json summary;  // includes wall_time_s
};

/// Partition, train (with attack and AGR), optionally detect and recover,
/// then evaluate. When `out_dir` is non-empty writes rounds.csv,
/// summary.json, per_client.csv, per_class.csv (plus detection_trace.csv,
/// recovery.csv, history.bin when enabled).
RunResult run_single(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& out_dir,
                     int threads = 1);

/// Runs every seed of the config; multiple seeds go to seed_<s>/ subdirs.
std::vector<RunResult> run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                      int threads = 1);

/// Grid file: {"dotted.key": [values...], ...}; cartesian product in key order.
std::vector<nlohmann::json> expand_grid(const nlohmann::json& base, const nlohmann::json& grid);

/// One run per grid point; writes sweep.csv with one row per point and seed.
int run_sweep(const nlohmann::json& base, const nlohmann::json& grid, const std::string& out_dir,
              int threads = 1);

/// Recovery from a saved history file.
RunResult run_recover(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& history_path,
                      const std::string& out_dir, int threads = 1);

/// JSON summary with the wall time removed (for reproducibility checks).
std::string stable_summary(const nlohmann::json& summary);

/// Fixed CSV headers.
inline constexpr const char* kRoundsHeader = "round,train_loss,overall_acc";
inline constexpr const char* kPerClientHeader = "client_id,test_size,accuracy";
inline constexpr const char* kPerClassHeader = "class,count,accuracy";

}  // namespace flsim
