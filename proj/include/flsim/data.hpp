#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "flsim/model.hpp"
#include "flsim/types.hpp"

namespace flsim {

struct Dataset {
  Eigen::MatrixXd features;
  std::vector<int> labels;
  int num_classes = 0;
  /// Natural client id per row; empty when the source had none.
  std::vector<int> client_ids;

  std::size_t size() const { return labels.size(); }
  void validate() const;
};

/// Gaussian blobs: class means at distance `sep` from the origin along random
/// unit directions, unit covariance, exactly `per_class` rows per class.
Dataset synth_dataset(int num_classes, int per_class, int input_dim, double sep,
                      std::uint64_t seed);

struct CsvOptions {
  /// Column holding a natural client id, excluded from the features. -1: none.
  int client_id_column = -1;
};

/// Numeric feature columns followed by an integer label column. A first row
/// that does not parse as numbers is treated as a header. C = max label + 1.
Dataset load_csv(const std::string& path, const CsvOptions& opts = {});
Dataset parse_csv(std::istream& in, const CsvOptions& opts = {}, const std::string& origin = "<stream>");

enum class PartitionKind { kIid, kDirichlet, kFcj, kNatural };

PartitionKind parse_partition_kind(const std::string& name);
std::string to_string(PartitionKind kind);

struct PartitionSpec {
  PartitionKind kind = PartitionKind::kIid;
  int num_clients = 2;
  double alpha = 0.5;  // Dirichlet concentration
  double bias = 0.5;   // FCJ bias
  std::uint64_t seed = 0;
  std::array<int, 3> split = {10, 1, 1};  // train : val : test

  void validate() const;
};

struct ClientShard {
  ClientId client_id = 0;
  std::vector<int> train, val, test;

  std::size_t size() const { return train.size() + val.size() + test.size(); }
  std::vector<int> all() const;
};

using Shards = std::vector<ClientShard>;

/// Dispatches on spec.kind.
Shards partition(const Dataset& ds, const PartitionSpec& spec);

Shards partition_iid(const Dataset& ds, const PartitionSpec& spec);
Shards partition_dirichlet(const Dataset& ds, const PartitionSpec& spec);
Shards partition_fcj(const Dataset& ds, const PartitionSpec& spec);
Shards partition_natural(const Dataset& ds, const PartitionSpec& spec);

/// Splits one client's pool into train/val/test by floor-rounded ratio.
ClientShard split_shard(ClientId id, std::vector<int> pool, const std::array<int, 3>& ratio,
                        std::uint64_t seed);

/// Largest-remainder rounding of `total * weights` (weights sum to 1).
/// Ties in the fractional part go to the lower index.
std::vector<int> largest_remainder(const std::vector<double>& weights, int total);

/// Keeps round(keep[c] * count_c) uniformly sampled rows of every class c.
Dataset imbalance_transform(const Dataset& ds, const std::vector<double>& keep,
                            std::uint64_t seed);

struct HeterogeneityStats {
  std::vector<int> samples_per_client;
  std::vector<int> classes_per_client;
  std::vector<std::vector<int>> class_freq;  // N x C
};

HeterogeneityStats heterogeneity_stats(const Shards& shards, const Dataset& ds);

/// client_id,n_samples,n_classes,class_0,...,class_{C-1}
void write_stats_csv(std::ostream& out, const HeterogeneityStats& stats);

/// Materializes rows of `ds` as a batch.
Batch to_batch(const Dataset& ds, const std::vector<int>& rows);

}  // namespace flsim
