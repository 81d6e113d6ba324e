#pragma once

#include <map>
#include <optional>
#include <vector>

#include "flsim/data.hpp"
#include "flsim/fldetector.hpp"
#include "flsim/model.hpp"
#include "flsim/types.hpp"

namespace flsim {

/// correct / total.
double overall_accuracy(const std::vector<int>& preds, const std::vector<int>& labels);

struct PerClassAccuracy {
  std::vector<std::optional<double>> per_class;  // nullopt: class absent from labels
  std::vector<int> counts;                       // label count per class
  double mean = 0.0;                             // over defined entries
  std::vector<int> undefined;
};

PerClassAccuracy per_class_and_mean(const std::vector<int>& preds, const std::vector<int>& labels,
                                    int num_classes);

struct PerClientAccuracy {
  std::map<ClientId, double> accuracy;
  std::map<ClientId, int> test_size;
  std::vector<ClientId> skipped;  // empty test split
};

PerClientAccuracy per_client_accuracy(const ParamVector& model, const Shards& shards,
                                      const Dataset& ds, const ModelSpec& spec);

/// Per-client values sorted ascending (plot-ready curve).
std::vector<double> sorted_curve(const PerClientAccuracy& acc);

struct MetricsReport {
  double overall_acc = 0.0;
  std::map<ClientId, double> per_client_acc;
  std::vector<std::optional<double>> per_class_acc;
  double mean_per_class_acc = 0.0;
  double attack_impact = 0.0;
  std::optional<DetectionOutcome> detection;
};

/// Global metrics on the union of the shards' test splits.
MetricsReport evaluate(const ParamVector& model, const Shards& shards, const Dataset& ds,
                       const ModelSpec& spec);

/// Union of all shards' test indices, ascending.
std::vector<int> union_test_indices(const Shards& shards);

}  // namespace flsim
