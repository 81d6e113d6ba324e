#pragma once

#include <string>
#include <vector>

#include "flsim/types.hpp"

namespace flsim {

enum class AggregatorKind { kMean, kTrMean, kMedian, kKrum, kNormBound };

AggregatorKind parse_aggregator_kind(const std::string& name);
std::string to_string(AggregatorKind kind);

struct AggregatorSpec {
  AggregatorKind kind = AggregatorKind::kMean;
  int m = 0;               // TrMean / Krum: assumed number of compromised clients
  int multi_k = 1;         // Krum: number of lowest-score updates averaged
  double threshold = 1.0;  // NormBound: L2 clipping radius

  /// Checks the spec against the number of updates it will receive.
  void validate(std::size_t n) const;
};

/// Coordinate-wise mean. Each coordinate is summed in ascending value order,
/// so the result is bit-identical under any permutation of the inputs.
ParamVector agg_mean(const std::vector<ParamVector>& updates);

/// Per coordinate: sort, drop the m largest and m smallest, average the rest.
ParamVector agg_trmean(const std::vector<ParamVector>& updates, int m);

/// Per-coordinate median; even n averages the two middle values.
ParamVector agg_median(const std::vector<ParamVector>& updates);

/// Krum scores: sum of squared distances to the n - m - 2 nearest others.
std::vector<double> krum_scores(const std::vector<ParamVector>& updates, int m);

/// Indices of the multi_k lowest Krum scores, ties to the lower index.
std::vector<std::size_t> krum_select(const std::vector<ParamVector>& updates, int m, int multi_k);

/// Mean of the Krum-selected updates.
ParamVector agg_krum(const std::vector<ParamVector>& updates, int m, int multi_k);

/// Every update scaled by min(1, threshold / ||u||), then agg_mean.
ParamVector agg_normbound(const std::vector<ParamVector>& updates, double threshold);

ParamVector aggregate(const AggregatorSpec& spec, const std::vector<ParamVector>& updates);

/// Values in ascending order; the order TrMean/Median/Mean reduce in.
std::vector<double> sorted_column(const std::vector<ParamVector>& updates, Eigen::Index j);

}  // namespace flsim
