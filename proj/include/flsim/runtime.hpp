#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "flsim/aggregation.hpp"
#include "flsim/attacks.hpp"
#include "flsim/model.hpp"
#include "flsim/types.hpp"

namespace flsim {

enum class Algorithm { kFedSgd, kFedAvg };
enum class Selection { kCrossSilo, kCrossDevice };

Algorithm parse_algorithm(const std::string& name);
Selection parse_selection(const std::string& name);
std::string to_string(Algorithm a);
std::string to_string(Selection s);

struct FLConfig {
  Algorithm algorithm = Algorithm::kFedAvg;
  int total_clients = 10;       // N
  int selected_per_round = 10;  // n
  int rounds = 10;              // T
  double server_lr = 1.0;       // eta
  double local_lr = 0.1;
  int local_epochs = 1;
  int batch_size = 32;
  Selection selection = Selection::kCrossSilo;
  std::uint64_t master_seed = 0;
  /// FedSGD only: gradient over the whole shard instead of one mini-batch.
  bool full_batch = false;

  void validate() const;
};

/// Everything a training run needs besides the model state.
struct Federation {
  ModelSpec model;
  FLConfig fl;
  AggregatorSpec agr;
  /// Training data per client, indexed by client id (label flipping for
  /// malicious clients already applied).
  std::vector<Batch> client_train;
  /// Clients allowed to participate. Empty means all clients.
  std::set<ClientId> active;
  int threads = 1;

  bool is_active(ClientId id) const { return active.empty() || active.count(id) > 0; }
};

struct RoundRecord {
  int round = 0;
  ParamVector global_before;
  std::vector<ClientId> selected;
  UpdateMap updates;  // what the server received
  ParamVector aggregate;
};

struct TrainingHistory {
  ParamVector initial_model;
  std::vector<RoundRecord> records;
  ParamVector final_model;
};

/// CrossSilo: all ids in `eligible`. CrossDevice: min(n, |eligible|) ids drawn
/// uniformly without replacement from a stream seeded by (master_seed, t).
/// Returned ascending.
std::vector<ClientId> select_clients(int round, const FLConfig& config,
                                     const std::vector<ClientId>& eligible);

/// Same, over all N clients.
std::vector<ClientId> select_clients(int round, const FLConfig& config);

/// Descent-direction update of one client at `params`:
/// FedSGD: -local_lr * grad on one batch_size sample (or the full shard);
/// FedAvg: locally trained params - params.
ParamVector client_update(const ParamVector& params, const Batch& train, const FLConfig& config,
                          std::uint64_t seed, const ModelSpec& spec);

/// Honest updates of `clients` at `params`, computed in parallel.
UpdateMap honest_updates(const ParamVector& params, const Federation& fed,
                         const std::vector<ClientId>& clients, int round);

/// Aggregate of `updates` in ascending client-id order.
ParamVector aggregate_sorted(const AggregatorSpec& agr, const UpdateMap& updates);

/// Crafted updates for the malicious clients among `honest`, merged over the
/// honest ones.
UpdateMap apply_adversary(Adversary* adversary, const ParamVector& params, const AggregatorSpec& agr,
                          const UpdateMap& honest, int round);

struct RoundResult {
  ParamVector model;
  RoundRecord record;
};

/// One round: select, compute honest updates, let the adversary replace the
/// malicious ones, aggregate, and apply theta += eta * aggregate.
RoundResult run_round(const ParamVector& params, const Federation& fed, Adversary* adversary,
                      int round);

/// Called after every round with the record and the new global model.
/// Returning false stops training after that round.
using RoundHook = std::function<bool(const RoundRecord&, const ParamVector&)>;

/// `rounds` rounds from `initial` (config.rounds when negative).
TrainingHistory run_training(const Federation& fed, Adversary* adversary, const ParamVector& initial,
                             const std::vector<RoundHook>& hooks = {}, int rounds = -1);

/// Clients that can take part: active and with a non-empty training shard.
std::vector<ClientId> eligible_clients(const Federation& fed);

}  // namespace flsim
