#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "flsim/lbfgs.hpp"
#include "flsim/runtime.hpp"
#include "flsim/types.hpp"

namespace flsim {

struct DetectorConfig {
  int window = 10;       // W: rounds of scores averaged per client
  int s_max = 10;        // L-BFGS pairs kept
  int k_max = 5;         // largest cluster count tried by the gap statistic
  int gap_refs = 10;     // B: uniform reference draws
  int start_round = -1;  // first round that may trigger detection; < 0 means W + 1
  bool normalize = true;  // per-round distances normalized to sum 1
  std::uint64_t seed = 0;

  int effective_start() const { return start_round < 0 ? window + 1 : start_round; }
  void validate() const;
};

struct PredictionResult {
  UpdateMap predicted;
  std::vector<ClientId> skipped;  // no previous update to extrapolate from
};

/// prev_k + B(theta_t - theta_{t-1}) for every client in `current` that also
/// has a previous update. The HVP is computed once and shared.
PredictionResult predict_updates(const UpdateMap& previous, const std::vector<ClientId>& current,
                                 const LbfgsBuffers& buffers, const ParamVector& model_delta);

/// Per-round scores and the window average per client.
struct SuspiciousScores {
  std::map<int, std::map<ClientId, double>> raw;        // Euclidean distances
  std::map<int, std::map<ClientId, double>> per_round;  // normalized (or raw) scores
  std::map<ClientId, double> averaged;
};

/// Adds round `round` to `scores`: d_k = ||predicted_k - actual_k||, normalized
/// by the round's total (uniform 1/n when every distance is zero), then
/// averaged over each client's last min(W, available) rounds.
void suspicious_scores(const UpdateMap& predicted, const UpdateMap& actual, int round, int window,
                       bool normalize, SuspiciousScores& scores);

/// Optimal 1-D k-means (exact dynamic program over the sorted values).
/// Returns cluster ids ordered by increasing cluster mean.
struct KMeans1D {
  std::vector<int> assignment;
  std::vector<double> centers;
  double sse = 0.0;
};
KMeans1D kmeans_1d(const std::vector<double>& values, int k);

/// Tibshirani gap statistic with uniform references on [min, max]. Returns
/// the smallest k with Gap(k) >= Gap(k+1) - s_{k+1}, capped at k_max.
int gap_statistic_k(const std::vector<double>& values, int k_max, int refs, std::uint64_t seed);

struct DetectionOutcome {
  std::set<ClientId> flagged;
  bool restarted = false;
  int detection_round = -1;
  double fpr = 0.0;
  double fnr = 0.0;
};

/// fpr = |flagged & benign| / |benign|, fnr = |malicious \ flagged| / |malicious|
/// (0 when the denominator is empty).
void fill_rates(DetectionOutcome& outcome, const std::set<ClientId>& clients,
                const std::set<ClientId>& malicious);

struct TraceRow {
  int round;
  ClientId client;
  double raw_distance;
  double normalized_score;
  double averaged_score;
  bool flagged;
};

/// round,client_id,raw_distance,normalized_score,averaged_score,flagged
void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows);

/// Server-side detector state, fed one finished round at a time.
class FLDetector {
 public:
  explicit FLDetector(DetectorConfig config);

  /// Returns the flagged set when detection triggers in this round.
  std::optional<std::set<ClientId>> observe(const RoundRecord& record);

  const SuspiciousScores& scores() const { return scores_; }
  const std::vector<TraceRow>& trace() const { return trace_; }
  void reset();

 private:
  DetectorConfig config_;
  LbfgsBuffers buffers_;
  std::optional<ParamVector> prev_global_;
  std::optional<ParamVector> prev_aggregate_;
  UpdateMap prev_updates_;
  SuspiciousScores scores_;
  std::vector<TraceRow> trace_;
};

struct DetectionRun {
  DetectionOutcome outcome;
  TrainingHistory history;        // after the restart when one happened
  TrainingHistory first_history;  // the run that triggered detection
  std::vector<TraceRow> trace;
};

/// Trains with the detector attached. On detection: stop, remove the flagged
/// clients, reset detector and adversary, and retrain once from `initial`.
DetectionRun detect_and_restart(const DetectorConfig& config, const Federation& fed,
                                Adversary* adversary, const ParamVector& initial);

}  // namespace flsim
