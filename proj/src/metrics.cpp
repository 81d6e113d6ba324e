#include "flsim/metrics.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>

namespace flsim {

double overall_accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  require(preds.size() == labels.size(), "predictions and labels differ in length");
  require(!labels.empty(), "accuracy of an empty set is undefined");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += preds[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

PerClassAccuracy per_class_and_mean(const std::vector<int>& preds, const std::vector<int>& labels,
                                    int num_classes) {
  require(preds.size() == labels.size(), "predictions and labels differ in length");
  PerClassAccuracy r;
  r.counts.assign(static_cast<std::size_t>(num_classes), 0);
  std::vector<int> correct(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && labels[i] < num_classes, "label out of range");
    ++r.counts[static_cast<std::size_t>(labels[i])];
    if (preds[i] == labels[i]) ++correct[static_cast<std::size_t>(labels[i])];
  }
  double sum = 0.0;
  int defined = 0;
  // Exact path: sum correct_c * (L / count_c) over a common denominator L so
  // that a balanced test set gives mean == overall accuracy bit for bit.
  constexpr std::uint64_t kExact = std::uint64_t{1} << 53;
  std::uint64_t lcm = 1, numer = 0;
  bool exact = true;
  for (int c : r.counts)
    if (c > 0 && exact) {
      lcm = std::lcm(lcm, static_cast<std::uint64_t>(c));
      exact = lcm < kExact;
    }
  for (int c = 0; c < num_classes; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    if (r.counts[cu] == 0) {
      r.per_class.emplace_back(std::nullopt);
      r.undefined.push_back(c);
      continue;
    }
    const double acc = static_cast<double>(correct[cu]) / r.counts[cu];
    r.per_class.emplace_back(acc);
    sum += acc;
    ++defined;
    if (exact) {
      const std::uint64_t term = static_cast<std::uint64_t>(correct[cu]) * (lcm / static_cast<std::uint64_t>(r.counts[cu]));
      exact = term < kExact && numer < kExact - term;
      numer += term;
    }
  }
  exact = exact && lcm * static_cast<std::uint64_t>(std::max(defined, 1)) < kExact;
  if (!defined) r.mean = 0.0;
  else if (exact) r.mean = static_cast<double>(numer) / static_cast<double>(lcm * static_cast<std::uint64_t>(defined));
  else r.mean = sum / defined;
  return r;
}

PerClientAccuracy per_client_accuracy(const ParamVector& model, const Shards& shards,
                                      const Dataset& ds, const ModelSpec& spec) {
  PerClientAccuracy r;
  for (const auto& s : shards) {
    if (s.test.empty()) {
      r.skipped.push_back(s.client_id);
      continue;
    }
    const Batch b = to_batch(ds, s.test);
    r.accuracy[s.client_id] = overall_accuracy(predict(model, b.features, spec), b.labels);
    r.test_size[s.client_id] = static_cast<int>(s.test.size());
  }
  return r;
}

std::vector<double> sorted_curve(const PerClientAccuracy& acc) {
  std::vector<double> v;
  for (const auto& [id, a] : acc.accuracy) v.push_back(a);
  std::sort(v.begin(), v.end());
  return v;
}

std::vector<int> union_test_indices(const Shards& shards) {
  std::vector<int> idx;
  for (const auto& s : shards) idx.insert(idx.end(), s.test.begin(), s.test.end());
  std::sort(idx.begin(), idx.end());
  return idx;
}

MetricsReport evaluate(const ParamVector& model, const Shards& shards, const Dataset& ds,
                       const ModelSpec& spec) {
  MetricsReport r;
  const auto idx = union_test_indices(shards);
  require(!idx.empty(), "no test samples in any shard");
  const Batch b = to_batch(ds, idx);
  const auto preds = predict(model, b.features, spec);
  r.overall_acc = overall_accuracy(preds, b.labels);
  const auto pc = per_class_and_mean(preds, b.labels, ds.num_classes);
  r.per_class_acc = pc.per_class;
  r.mean_per_class_acc = pc.mean;
  r.per_client_acc = per_client_accuracy(model, shards, ds, spec).accuracy;
  return r;
}

}  // namespace flsim
