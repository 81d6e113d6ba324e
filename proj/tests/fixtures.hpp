#pragma once

#include "flsim/data.hpp"
#include "flsim/runtime.hpp"

namespace flsim::testing {

struct SmallFederation {
  Dataset ds;
  Shards shards;
  Federation fed;
};

// Separable synthetic data split IID over `clients` clients, logistic model.
inline SmallFederation small_federation(int clients, int rounds, Algorithm algo, std::uint64_t seed,
                                        int per_class = 60, int classes = 4) {
  SmallFederation s;
  s.ds = synth_dataset(classes, per_class, 5, 5.0, seed);
  s.shards = partition(s.ds, {PartitionKind::kIid, clients, 0.5, 0.5, seed});
  s.fed.model = {5, 0, classes, Activation::kRelu};
  s.fed.fl.algorithm = algo;
  s.fed.fl.total_clients = clients;
  s.fed.fl.selected_per_round = clients;
  s.fed.fl.rounds = rounds;
  s.fed.fl.local_lr = algo == Algorithm::kFedSgd ? 0.5 : 0.1;
  s.fed.fl.batch_size = 8;
  s.fed.fl.full_batch = algo == Algorithm::kFedSgd;
  s.fed.fl.master_seed = seed;
  for (const auto& sh : s.shards) s.fed.client_train.push_back(to_batch(s.ds, sh.train));
  return s;
}

}  // namespace flsim::testing
