#include <doctest.h>

#include <set>

#include "flsim/metrics.hpp"
#include "fixtures.hpp"
#include "helpers.hpp"

using namespace flsim;

TEST_CASE("client selection") {
  FLConfig cfg;
  cfg.total_clients = 50;
  cfg.selected_per_round = 7;
  cfg.selection = Selection::kCrossDevice;
  cfg.master_seed = 3;
  const auto a = select_clients(4, cfg);
  CHECK(a.size() == 7);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(std::set<ClientId>(a.begin(), a.end()).size() == 7);
  CHECK(a == select_clients(4, cfg));
  CHECK(a != select_clients(5, cfg));
  cfg.selection = Selection::kCrossSilo;
  cfg.selected_per_round = 50;
  CHECK(select_clients(0, cfg).size() == 50);
  // every client is eventually selected in cross-device mode
  cfg.selection = Selection::kCrossDevice;
  cfg.selected_per_round = 5;
  std::set<ClientId> seen;
  for (int t = 0; t < 200; ++t)
    for (ClientId id : select_clients(t, cfg)) seen.insert(id);
  CHECK(seen.size() == 50);
}

TEST_CASE("FedSGD full-batch update is minus lr times the gradient") {
  auto s = testing::small_federation(4, 1, Algorithm::kFedSgd, 1);
  const ParamVector p = init_params(s.fed.model, 2);
  const ParamVector u = client_update(p, s.fed.client_train[0], s.fed.fl, 5, s.fed.model);
  const ParamVector g = loss_and_grad(p, s.fed.client_train[0], s.fed.model).grad;
  CHECK(testing::rel_err(u, ParamVector(-0.5 * g)) < 1e-15);
}

TEST_CASE("FedAvg update is the locally trained model minus the global model") {
  auto s = testing::small_federation(4, 1, Algorithm::kFedAvg, 1);
  const ParamVector p = init_params(s.fed.model, 2);
  const ParamVector u = client_update(p, s.fed.client_train[1], s.fed.fl, 9, s.fed.model);
  const ParamVector trained = sgd_local_train(p, s.fed.client_train[1], {1, 0.1, 8}, 9, s.fed.model);
  CHECK(u == trained - p);
  s.fed.fl.local_lr = 0.0;
  CHECK(client_update(p, s.fed.client_train[1], s.fed.fl, 9, s.fed.model).isZero());
}

TEST_CASE("honest updates do not depend on the thread count") {
  auto s = testing::small_federation(12, 1, Algorithm::kFedAvg, 4);
  const ParamVector p = init_params(s.fed.model, 3);
  const auto ids = eligible_clients(s.fed);
  s.fed.threads = 1;
  const auto one = honest_updates(p, s.fed, ids, 2);
  s.fed.threads = 4;
  CHECK(honest_updates(p, s.fed, ids, 2) == one);
}

TEST_CASE("benign training learns separable data") {
  for (auto algo : {Algorithm::kFedSgd, Algorithm::kFedAvg}) {
    auto s = testing::small_federation(8, 30, algo, 5);
    const ParamVector init = init_params(s.fed.model, 1);
    const auto h = run_training(s.fed, nullptr, init);
    CHECK(h.records.size() == 30);
    CHECK(h.records[0].global_before == init);
    CHECK(evaluate(h.final_model, s.shards, s.ds, s.fed.model).overall_acc > 0.9);
  }
}

TEST_CASE("a round applies the aggregate with the server learning rate") {
  auto s = testing::small_federation(5, 1, Algorithm::kFedSgd, 6);
  s.fed.fl.server_lr = 0.7;
  const ParamVector p = init_params(s.fed.model, 1);
  const auto r = run_round(p, s.fed, nullptr, 0);
  CHECK(r.model == p + 0.7 * r.record.aggregate);
  CHECK(r.record.aggregate == aggregate_sorted(s.fed.agr, r.record.updates));
  CHECK(r.record.selected.size() == 5);
}

TEST_CASE("inactive clients never take part") {
  auto s = testing::small_federation(6, 3, Algorithm::kFedSgd, 7);
  s.fed.active = {0, 2, 4};
  const auto h = run_training(s.fed, nullptr, init_params(s.fed.model, 1));
  for (const auto& rec : h.records) CHECK(rec.selected == std::vector<ClientId>{0, 2, 4});
}

TEST_CASE("hooks can stop training early") {
  auto s = testing::small_federation(4, 10, Algorithm::kFedSgd, 8);
  int calls = 0;
  const auto h = run_training(s.fed, nullptr, init_params(s.fed.model, 1),
                              {[&](const RoundRecord&, const ParamVector&) { return ++calls < 3; }});
  CHECK(h.records.size() == 3);
}

TEST_CASE("configuration validation") {
  FLConfig cfg;
  cfg.selected_per_round = 11;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK_THROWS_AS(parse_algorithm("fedprox"), Error);
  CHECK(parse_selection("cross_device") == Selection::kCrossDevice);
}
