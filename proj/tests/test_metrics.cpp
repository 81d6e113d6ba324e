#include <doctest.h>

#include <cmath>
#include <random>

#include "flsim/metrics.hpp"

using namespace flsim;

TEST_CASE("accuracy basics") {
  CHECK(overall_accuracy({0, 1, 2, 2}, {0, 1, 1, 2}) == 0.75);
  CHECK_THROWS_AS(overall_accuracy({}, {}), Error);
  const auto pc = per_class_and_mean({0, 0, 1}, {0, 1, 1}, 3);
  CHECK(*pc.per_class[0] == 1.0);
  CHECK(*pc.per_class[1] == 0.5);
  CHECK_FALSE(pc.per_class[2].has_value());
  CHECK(pc.undefined == std::vector<int>{2});
  CHECK(pc.mean == 0.75);
}

TEST_CASE("balanced labels: overall accuracy equals mean per-class accuracy exactly") {
  std::mt19937_64 rng(1);
  for (int inst = 0; inst < 100; ++inst) {
    const int c = 2 + static_cast<int>(rng() % 9), k = 1 + static_cast<int>(rng() % 20);
    std::vector<int> labels, preds;
    for (int y = 0; y < c; ++y)
      for (int i = 0; i < k; ++i) {
        labels.push_back(y);
        preds.push_back(static_cast<int>(rng() % c));
      }
    CHECK(per_class_and_mean(preds, labels, c).mean == overall_accuracy(preds, labels));
  }
}

TEST_CASE("weighted identities reconstruct the overall correct count") {
  std::mt19937_64 rng(2);
  for (int inst = 0; inst < 100; ++inst) {
    const int c = 2 + static_cast<int>(rng() % 6);
    const std::size_t n = 1 + rng() % 300;
    std::vector<int> labels(n), preds(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng() % c);
      preds[i] = rng() % 3 ? labels[i] : static_cast<int>(rng() % c);
    }
    const double overall = overall_accuracy(preds, labels);
    const auto pc = per_class_and_mean(preds, labels, c);
    long long correct = 0;
    double weighted = 0;
    for (int y = 0; y < c; ++y)
      if (pc.per_class[y]) {
        correct += std::llround(*pc.per_class[y] * pc.counts[y]);
        weighted += *pc.per_class[y] * pc.counts[y] / static_cast<double>(n);
      }
    CHECK(correct == std::llround(overall * static_cast<double>(n)));
    CHECK(std::abs(weighted - overall) <= 1e-12);
  }
}

TEST_CASE("per-client accuracies weight back to overall accuracy") {
  const Dataset ds = synth_dataset(3, 40, 4, 1.0, 3);
  const auto shards = partition(ds, {PartitionKind::kDirichlet, 6, 0.5, 0.5, 2, {1, 0, 1}});
  const ModelSpec spec{4, 0, 3, Activation::kRelu};
  const ParamVector model = init_params(spec, 9);
  const auto pc = per_client_accuracy(model, shards, ds, spec);
  const auto report = evaluate(model, shards, ds, spec);
  long long correct = 0, total = 0;
  for (const auto& [id, acc] : pc.accuracy) {
    correct += std::llround(acc * pc.test_size.at(id));
    total += pc.test_size.at(id);
  }
  CHECK(total == static_cast<long long>(union_test_indices(shards).size()));
  CHECK(correct == std::llround(report.overall_acc * static_cast<double>(total)));
  const auto curve = sorted_curve(pc);
  CHECK(std::is_sorted(curve.begin(), curve.end()));
  CHECK(curve.size() == pc.accuracy.size());
}

TEST_CASE("clients without test data are skipped") {
  const Dataset ds = synth_dataset(2, 3, 2, 5.0, 1);
  const auto shards = partition(ds, {PartitionKind::kIid, 3, 0.5, 0.5, 1});
  const ModelSpec spec{2, 0, 2, Activation::kRelu};
  const auto pc = per_client_accuracy(init_params(spec, 1), shards, ds, spec);
  CHECK(pc.skipped.size() == 3);
  CHECK(pc.accuracy.empty());
}
