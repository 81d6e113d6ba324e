#include <doctest.h>

#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "flsim/data.hpp"

using namespace flsim;

namespace {

void check_disjoint_cover(const Shards& shards, std::size_t n) {
  std::vector<int> all;
  for (const auto& s : shards) {
    const auto v = s.all();
    all.insert(all.end(), v.begin(), v.end());
  }
  std::sort(all.begin(), all.end());
  REQUIRE(all.size() == n);
  for (std::size_t i = 0; i < n; ++i) CHECK(all[i] == static_cast<int>(i));
}

}  // namespace

TEST_CASE("synthetic dataset is balanced and reproducible") {
  const Dataset a = synth_dataset(4, 30, 5, 5.0, 1);
  CHECK(a.size() == 120);
  CHECK(a.features.cols() == 5);
  CHECK(a.num_classes == 4);
  for (int c = 0; c < 4; ++c) CHECK(std::count(a.labels.begin(), a.labels.end(), c) == 30);
  CHECK(a.features == synth_dataset(4, 30, 5, 5.0, 1).features);
}

TEST_CASE("largest remainder rounding") {
  CHECK(largest_remainder({1.0 / 3, 1.0 / 3, 1.0 / 3}, 10) == std::vector<int>{4, 3, 3});
  CHECK(largest_remainder({0.5, 0.25, 0.25}, 8) == std::vector<int>{4, 2, 2});
  CHECK(largest_remainder({0.1, 0.6, 0.3}, 7) == std::vector<int>{1, 4, 2});
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> w(1 + t % 9);
    for (auto& x : w) x = std::uniform_real_distribution<double>(0, 1)(rng);
    const double s = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto& x : w) x /= s;
    const int total = t * 3;
    const auto c = largest_remainder(w, total);
    CHECK(std::accumulate(c.begin(), c.end(), 0) == total);
    for (std::size_t k = 0; k < w.size(); ++k) CHECK(std::abs(c[k] - w[k] * total) < 1.0 + 1e-9);
  }
}

TEST_CASE("shard split uses 10:1:1 floor rounding") {
  std::vector<int> pool(24);
  std::iota(pool.begin(), pool.end(), 0);
  auto s = split_shard(3, pool, {10, 1, 1}, 9);
  CHECK(s.client_id == 3);
  CHECK(s.train.size() == 20);
  CHECK(s.val.size() == 2);
  CHECK(s.test.size() == 2);
  s = split_shard(0, {0, 1, 2, 3, 4}, {10, 1, 1}, 9);
  CHECK(s.train.size() == 5);
  CHECK(s.test.empty());
}

TEST_CASE("IID partition is a balanced disjoint cover") {
  const Dataset ds = synth_dataset(5, 41, 3, 5.0, 2);
  const auto shards = partition(ds, {PartitionKind::kIid, 7, 0.5, 0.5, 3});
  REQUIRE(shards.size() == 7);
  check_disjoint_cover(shards, ds.size());
  std::size_t lo = ds.size(), hi = 0;
  for (const auto& s : shards) {
    lo = std::min(lo, s.size());
    hi = std::max(hi, s.size());
  }
  CHECK(hi - lo <= 1);
}

TEST_CASE("Dirichlet concentration controls label skew (Monte Carlo)") {
  const Dataset ds = synth_dataset(10, 60, 2, 5.0, 4);
  auto mean_classes = [&](double alpha) {
    double total = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto shards = partition(ds, {PartitionKind::kDirichlet, 10, alpha, 0.5, seed});
      check_disjoint_cover(shards, ds.size());
      const auto st = heterogeneity_stats(shards, ds);
      total += std::accumulate(st.classes_per_client.begin(), st.classes_per_client.end(), 0.0) / 10;
    }
    return total / 10;
  };
  const double skewed = mean_classes(0.05), flat = mean_classes(1000.0);
  CHECK(flat > 9.9);
  CHECK(skewed < 5.0);
}

TEST_CASE("FCJ bias routes classes to their own group") {
  const Dataset ds = synth_dataset(4, 40, 2, 5.0, 5);
  const auto pure = partition(ds, {PartitionKind::kFcj, 8, 0.5, 1.0, 1});
  check_disjoint_cover(pure, ds.size());
  const auto st = heterogeneity_stats(pure, ds);
  for (int k = 0; k < 8; ++k) {
    CHECK(st.classes_per_client[k] == 1);
    CHECK(st.class_freq[k][k / 2] == 20);
  }
  // bias = 1/C spreads every class evenly over the groups
  const auto even = partition(ds, {PartitionKind::kFcj, 4, 0.5, 0.25, 1});
  for (const auto& row : heterogeneity_stats(even, ds).class_freq)
    for (int f : row) CHECK(f == 10);
  CHECK_THROWS_AS(partition(ds, {PartitionKind::kFcj, 3, 0.5, 0.5, 1}), Error);
}

TEST_CASE("natural partition maps distinct client ids in sorted order") {
  std::istringstream in("x,y,client,label\n0,0,17,0\n1,1,4,1\n2,2,17,0\n3,3,9,1\n");
  const Dataset ds = parse_csv(in, {2});
  CHECK(ds.features.cols() == 2);
  REQUIRE(ds.client_ids == std::vector<int>{17, 4, 17, 9});
  const auto shards = partition(ds, {PartitionKind::kNatural, 4, 0.5, 0.5, 0, {1, 0, 0}});
  CHECK(shards[0].all() == std::vector<int>{1});
  CHECK(shards[1].all() == std::vector<int>{3});
  CHECK(shards[2].all() == std::vector<int>{0, 2});
  CHECK(shards[3].size() == 0);
  CHECK_THROWS_AS(partition(ds, {PartitionKind::kNatural, 2, 0.5, 0.5, 0}), Error);
}

TEST_CASE("CSV parsing: header detection, label column and error locations") {
  std::istringstream plain("1.5,2,1\n0,-1,0\n3,3,2\n");
  const Dataset ds = parse_csv(plain);
  CHECK(ds.size() == 3);
  CHECK(ds.num_classes == 3);
  CHECK(ds.features(0, 0) == 1.5);
  CHECK(ds.labels == std::vector<int>{1, 0, 2});

  std::istringstream bad("a,b,label\n1,2,0\n1,oops,1\n");
  try {
    parse_csv(bad, {}, "data.csv");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("data.csv:3") != std::string::npos);
  }
  std::istringstream ragged("1,2,0\n1,1\n");
  CHECK_THROWS_AS(parse_csv(ragged), Error);
  CHECK_THROWS_AS(load_csv("/nonexistent/file.csv"), Error);
}

TEST_CASE("imbalance transform keeps the requested class fractions") {
  const Dataset ds = synth_dataset(3, 100, 2, 5.0, 6);
  const Dataset out = imbalance_transform(ds, {1.0, 0.5, 0.1}, 3);
  CHECK(std::count(out.labels.begin(), out.labels.end(), 0) == 100);
  CHECK(std::count(out.labels.begin(), out.labels.end(), 1) == 50);
  CHECK(std::count(out.labels.begin(), out.labels.end(), 2) == 10);
  CHECK_THROWS_AS(imbalance_transform(ds, {1.0, 0.5}, 3), Error);
}

TEST_CASE("heterogeneity statistics CSV layout") {
  const Dataset ds = synth_dataset(2, 6, 2, 5.0, 7);
  const auto shards = partition(ds, {PartitionKind::kFcj, 2, 0.5, 1.0, 1});
  std::ostringstream out;
  write_stats_csv(out, heterogeneity_stats(shards, ds));
  CHECK(out.str() == "client_id,n_samples,n_classes,class_0,class_1\n0,6,1,6,0\n1,6,1,0,6\n");
}
