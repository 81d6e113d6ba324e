#pragma once

#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "flsim/lbfgs.hpp"
#include "flsim/runtime.hpp"
#include "flsim/types.hpp"

namespace flsim {

/// Original training trajectory kept for recovery: the global model before
/// every round and every update the server received.
struct HistoryStore {
  std::size_t dim = 0;
  int num_clients = 0;
  std::vector<ParamVector> globals;  // theta-bar^t, t = 0..T-1
  std::vector<UpdateMap> updates;    // grad-bar^t_k
  ParamVector final_model;

  int rounds() const { return static_cast<int>(globals.size()); }
  std::size_t update_count() const;
  void validate() const;

  static HistoryStore from_training(const TrainingHistory& h, int num_clients);
};

constexpr double kTauDisabled = std::numeric_limits<double>::infinity();

struct RecoveryConfig {
  int warmup = 10;          // T_w
  int correction = 10;      // T_c
  int finetune = 5;         // T_f
  double tau = kTauDisabled;
  int s_max = 10;
  std::set<ClientId> believed_benign;
  /// Also compute exact updates on estimation rounds to log the estimation
  /// error (costs one extra client pass per estimated round).
  bool log_estimation_error = false;

  void validate(int total_rounds) const;
};

/// Whether round t asks every client for an exact update: warmup, the
/// periodic correction rounds (t - T_w = 0 mod T_c) and fine-tuning.
bool is_exact_round(int t, int total_rounds, const RecoveryConfig& cfg);

/// T_w + ceil((T - T_w - T_f) / T_c) + T_f.
int exact_updates_lower_bound(int total_rounds, int warmup, int correction, int finetune);

/// stored + B_k (recovered - original).
ParamVector estimate_update(const ParamVector& stored, const LbfgsBuffers& buffers,
                            const ParamVector& recovered_global, const ParamVector& original_global);

/// True iff some |component| > tau.
bool abnormality_check(const ParamVector& estimate, double tau);

struct RecoveryRoundReport {
  int round;
  int exact_count;
  int estimated_count;
  double estimation_error;  // NaN when not logged
  double accuracy;          // NaN without an evaluation hook
};

struct RecoveryState {
  ParamVector recovered_global;
  std::map<ClientId, LbfgsBuffers> buffers;
  int exact_rounds = 0;            // rounds where every client was exact
  int exact_client_updates = 0;    // individual exact updates, abnormality ones included
  int estimated_client_updates = 0;
  int abnormal_client_updates = 0;
  std::map<int, double> estimation_error_log;
  std::vector<RecoveryRoundReport> report;
};

using EvalHook = std::function<double(const ParamVector&)>;

/// Replays the original rounds over believed_benign clients starting from
/// `initial`, mixing exact and L-BFGS-estimated updates, aggregating with
/// fed.agr. Escaped malicious clients (believed benign but in the
/// adversary's set) send crafted updates on their exact rounds.
std::pair<ParamVector, RecoveryState> recover(const HistoryStore& history, const RecoveryConfig& config,
                                              const Federation& fed, Adversary* adversary,
                                              const ParamVector& initial, const EvalHook& eval = {});

/// round,exact_count,estimated_count,estimation_error,accuracy
void write_recovery_csv(std::ostream& out, const std::vector<RecoveryRoundReport>& rows);

struct SweepPoint {
  int warmup;
  int correction;
  double tau;
};

struct SweepRow {
  SweepPoint point;
  double exact_fraction;
  double lower_bound_fraction;
  double recovered_accuracy;
  int retrain_rounds;
  double retrain_accuracy;
};

/// One recover() per grid point, plus retraining from scratch over
/// believed_benign for round(exact_fraction * T) rounds.
std::vector<SweepRow> recovery_sweep(const HistoryStore& history, const RecoveryConfig& base,
                                     const std::vector<SweepPoint>& grid, const Federation& fed,
                                     Adversary* adversary, const ParamVector& initial,
                                     const EvalHook& eval);

/// Binary history file: "FLHIST01", uint32 endianness tag 0x01020304, then
/// uint64 d, N, T (all little-endian); per round: d doubles (global model),
/// uint64 update count, then (uint64 client id, d doubles) per update;
/// finally d doubles for the final model.
void save_history(const HistoryStore& h, const std::string& path);
HistoryStore load_history(const std::string& path);

struct HistoryFileStats {
  std::uintmax_t file_bytes = 0;
  std::size_t dim = 0;
  int num_clients = 0;
  int rounds = 0;
  std::size_t updates = 0;
};

HistoryFileStats history_file_stats(const std::string& path);

}  // namespace flsim
