#include "flsim/runtime.hpp"

#include <algorithm>
#include <numeric>

#include "flsim/parallel.hpp"
#include "flsim/rng.hpp"

namespace flsim {

Algorithm parse_algorithm(const std::string& name) {
  if (name == "fedsgd") return Algorithm::kFedSgd;
  if (name == "fedavg") return Algorithm::kFedAvg;
  throw Error("unknown FL algorithm '" + name + "'");
}

Selection parse_selection(const std::string& name) {
  if (name == "cross_silo") return Selection::kCrossSilo;
  if (name == "cross_device") return Selection::kCrossDevice;
  throw Error("unknown selection mode '" + name + "'");
}

std::string to_string(Algorithm a) { return a == Algorithm::kFedSgd ? "fedsgd" : "fedavg"; }
std::string to_string(Selection s) { return s == Selection::kCrossSilo ? "cross_silo" : "cross_device"; }

void FLConfig::validate() const {
  require(total_clients >= 1, "total_clients must be >= 1");
  require(rounds >= 0, "rounds must be >= 0");
  require(server_lr > 0.0, "server_lr must be > 0");
  require(local_lr >= 0.0, "local_lr must be >= 0");
  require(local_epochs >= 1, "local_epochs must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  if (selection == Selection::kCrossSilo)
    require(selected_per_round == total_clients, "cross-silo selects every client (n = N)");
  else
    require(selected_per_round >= 1 && selected_per_round < total_clients,
            "cross-device needs 1 <= n < N");
  if (algorithm == Algorithm::kFedSgd) require(local_epochs == 1, "FedSGD uses a single local step (E = 1)");
}

std::vector<ClientId> select_clients(int round, const FLConfig& config,
                                     const std::vector<ClientId>& eligible) {
  std::vector<ClientId> ids = eligible;
  std::sort(ids.begin(), ids.end());
  if (config.selection == Selection::kCrossSilo) return ids;
  const std::size_t n = std::min(ids.size(), static_cast<std::size_t>(config.selected_per_round));
  Rng rng(derive_seed(config.master_seed, Stream::kSelection, static_cast<std::uint64_t>(round)));
  // partial Fisher-Yates: first n slots
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (ids.size() - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(n);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<ClientId> select_clients(int round, const FLConfig& config) {
  std::vector<ClientId> all(static_cast<std::size_t>(config.total_clients));
  std::iota(all.begin(), all.end(), 0);
  return select_clients(round, config, all);
}

ParamVector client_update(const ParamVector& params, const Batch& train, const FLConfig& config,
                          std::uint64_t seed, const ModelSpec& spec) {
  require(train.size() > 0, "client has an empty training shard");
  if (config.algorithm == Algorithm::kFedAvg) {
    const SgdOptions opts{config.local_epochs, config.local_lr, config.batch_size};
    return sgd_local_train(params, train, opts, seed, spec) - params;
  }
  if (config.full_batch || static_cast<std::size_t>(config.batch_size) >= train.size())
    return -config.local_lr * loss_and_grad(params, train, spec).grad;
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  shuffle(order, rng);
  order.resize(static_cast<std::size_t>(config.batch_size));
  return -config.local_lr * loss_and_grad(params, gather(train, order), spec).grad;
}

std::vector<ClientId> eligible_clients(const Federation& fed) {
  std::vector<ClientId> out;
  for (std::size_t k = 0; k < fed.client_train.size(); ++k) {
    const auto id = static_cast<ClientId>(k);
    if (fed.is_active(id) && fed.client_train[k].size() > 0) out.push_back(id);
  }
  return out;
}

UpdateMap honest_updates(const ParamVector& params, const Federation& fed,
                         const std::vector<ClientId>& clients, int round) {
  std::vector<ParamVector> results(clients.size());
  parallel_for(clients.size(), fed.threads, [&](std::size_t i) {
    const ClientId id = clients[i];
    results[i] = client_update(params, fed.client_train.at(static_cast<std::size_t>(id)), fed.fl,
                               client_seed(fed.fl.master_seed, id, round), fed.model);
  });
  UpdateMap out;
  for (std::size_t i = 0; i < clients.size(); ++i) out.emplace(clients[i], std::move(results[i]));
  return out;
}

ParamVector aggregate_sorted(const AggregatorSpec& agr, const UpdateMap& updates) {
  std::vector<ParamVector> list;
  list.reserve(updates.size());
  for (const auto& [id, u] : updates) list.push_back(u);
  return aggregate(agr, list);
}

UpdateMap apply_adversary(Adversary* adversary, const ParamVector& params, const AggregatorSpec& agr,
                          const UpdateMap& honest, int round) {
  UpdateMap sent = honest;
  if (adversary == nullptr) return sent;
  RoundContext ctx;
  ctx.round = round;
  ctx.global = &params;
  ctx.agr = &agr;
  ctx.honest = &honest;
  for (const auto& [id, u] : honest)
    if (adversary->is_malicious(id)) ctx.malicious_selected.insert(id);
  for (auto& [id, u] : apply_attack(*adversary, ctx)) {
    require(ctx.malicious_selected.count(id) > 0, "adversary replaced a benign update");
    sent[id] = std::move(u);
  }
  return sent;
}

RoundResult run_round(const ParamVector& params, const Federation& fed, Adversary* adversary,
                      int round) {
  RoundResult r;
  r.record.round = round;
  r.record.global_before = params;
  r.record.selected = select_clients(round, fed.fl, eligible_clients(fed));
  require(!r.record.selected.empty(), "no client can take part in round " + std::to_string(round));

  const UpdateMap honest = honest_updates(params, fed, r.record.selected, round);
  r.record.updates = apply_adversary(adversary, params, fed.agr, honest, round);
  r.record.aggregate = aggregate_sorted(fed.agr, r.record.updates);
  require(r.record.aggregate.allFinite(),
          "numerical blow-up: non-finite aggregate in round " + std::to_string(round));
  r.model = params + fed.fl.server_lr * r.record.aggregate;
  if (adversary) adversary->observe(params, r.record.updates, r.record.aggregate);
  return r;
}

TrainingHistory run_training(const Federation& fed, Adversary* adversary, const ParamVector& initial,
                             const std::vector<RoundHook>& hooks, int rounds) {
  fed.fl.validate();
  require(static_cast<std::size_t>(initial.size()) == fed.model.param_count(),
          "initial model has the wrong length");
  if (rounds < 0) rounds = fed.fl.rounds;
  TrainingHistory h;
  h.initial_model = initial;
  ParamVector model = initial;
  for (int t = 0; t < rounds; ++t) {
    auto r = run_round(model, fed, adversary, t);
    model = std::move(r.model);
    h.records.push_back(std::move(r.record));
    bool go_on = true;
    for (const auto& hook : hooks) go_on = hook(h.records.back(), model) && go_on;
    if (!go_on) break;
  }
  h.final_model = std::move(model);
  return h;
}

}  // namespace flsim
