#include "flsim/aggregation.hpp"

#include <algorithm>
#include <numeric>

namespace flsim {

namespace {

Eigen::Index check_updates(const std::vector<ParamVector>& updates) {
  require(!updates.empty(), "aggregation needs at least one update");
  const Eigen::Index d = updates.front().size();
  for (const auto& u : updates) require(u.size() == d, "updates have different lengths");
  return d;
}

double sum_range(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
  double s = 0.0;
  for (std::size_t i = lo; i < hi; ++i) s += v[i];
  return s;
}

}  // namespace

AggregatorKind parse_aggregator_kind(const std::string& name) {
  if (name == "mean") return AggregatorKind::kMean;
  if (name == "trmean") return AggregatorKind::kTrMean;
  if (name == "median") return AggregatorKind::kMedian;
  if (name == "krum") return AggregatorKind::kKrum;
  if (name == "normbound") return AggregatorKind::kNormBound;
  throw Error("unknown aggregator '" + name + "'");
}

std::string to_string(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::kMean: return "mean";
    case AggregatorKind::kTrMean: return "trmean";
    case AggregatorKind::kMedian: return "median";
    case AggregatorKind::kKrum: return "krum";
    case AggregatorKind::kNormBound: return "normbound";
  }
  return "?";
}

void AggregatorSpec::validate(std::size_t n) const {
  require(n >= 1, "aggregation needs at least one update");
  switch (kind) {
    case AggregatorKind::kTrMean:
      require(m >= 0 && 2 * static_cast<std::size_t>(m) < n,
              "TrMean needs 2m < n (m = " + std::to_string(m) + ", n = " + std::to_string(n) + ")");
      break;
    case AggregatorKind::kKrum:
      require(m >= 0 && n >= 2 * static_cast<std::size_t>(m) + 3,
              "Krum needs n >= 2m + 3 (m = " + std::to_string(m) + ", n = " + std::to_string(n) + ")");
      require(multi_k >= 1 && static_cast<std::size_t>(multi_k) <= n, "Krum multi_k out of range");
      break;
    case AggregatorKind::kNormBound:
      require(threshold > 0.0, "NormBound threshold must be > 0");
      break;
    default:
      break;
  }
}

std::vector<double> sorted_column(const std::vector<ParamVector>& updates, Eigen::Index j) {
  std::vector<double> col(updates.size());
  for (std::size_t i = 0; i < updates.size(); ++i) col[i] = updates[i][j];
  std::sort(col.begin(), col.end());
  return col;
}

ParamVector agg_mean(const std::vector<ParamVector>& updates) { return agg_trmean(updates, 0); }

ParamVector agg_trmean(const std::vector<ParamVector>& updates, int m) {
  const Eigen::Index d = check_updates(updates);
  const std::size_t n = updates.size();
  require(m >= 0 && 2 * static_cast<std::size_t>(m) < n,
          "TrMean needs 2m < n (m = " + std::to_string(m) + ", n = " + std::to_string(n) + ")");
  const std::size_t lo = static_cast<std::size_t>(m), hi = n - static_cast<std::size_t>(m);
  const double keep = static_cast<double>(hi - lo);
  ParamVector out(d);
  for (Eigen::Index j = 0; j < d; ++j) out[j] = sum_range(sorted_column(updates, j), lo, hi) / keep;
  return out;
}

ParamVector agg_median(const std::vector<ParamVector>& updates) {
  const Eigen::Index d = check_updates(updates);
  const std::size_t n = updates.size();
  ParamVector out(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const auto col = sorted_column(updates, j);
    out[j] = n % 2 == 1 ? col[n / 2] : (col[n / 2 - 1] + col[n / 2]) / 2.0;
  }
  return out;
}

std::vector<double> krum_scores(const std::vector<ParamVector>& updates, int m) {
  check_updates(updates);
  const std::size_t n = updates.size();
  require(m >= 0 && n >= 2 * static_cast<std::size_t>(m) + 3,
          "Krum needs n >= 2m + 3 (m = " + std::to_string(m) + ", n = " + std::to_string(n) + ")");
  const std::size_t neighbors = n - static_cast<std::size_t>(m) - 2;
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      dist[i][j] = dist[j][i] = (updates[i] - updates[j]).squaredNorm();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> others;
    others.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) others.push_back(dist[i][j]);
    std::sort(others.begin(), others.end());
    scores[i] = sum_range(others, 0, neighbors);
  }
  return scores;
}

std::vector<std::size_t> krum_select(const std::vector<ParamVector>& updates, int m, int multi_k) {
  const auto scores = krum_scores(updates, m);
  require(multi_k >= 1 && static_cast<std::size_t>(multi_k) <= updates.size(),
          "Krum multi_k out of range");
  std::vector<std::size_t> idx(updates.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  idx.resize(static_cast<std::size_t>(multi_k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

ParamVector agg_krum(const std::vector<ParamVector>& updates, int m, int multi_k) {
  const auto sel = krum_select(updates, m, multi_k);
  std::vector<ParamVector> chosen;
  chosen.reserve(sel.size());
  for (auto i : sel) chosen.push_back(updates[i]);
  return agg_mean(chosen);
}

ParamVector agg_normbound(const std::vector<ParamVector>& updates, double threshold) {
  check_updates(updates);
  require(threshold > 0.0, "NormBound threshold must be > 0");
  std::vector<ParamVector> clipped;
  clipped.reserve(updates.size());
  for (const auto& u : updates) {
    const double norm = u.norm();
    clipped.push_back(norm > threshold ? ParamVector(u * (threshold / norm)) : u);
  }
  return agg_mean(clipped);
}

ParamVector aggregate(const AggregatorSpec& spec, const std::vector<ParamVector>& updates) {
  spec.validate(updates.size());
  switch (spec.kind) {
    case AggregatorKind::kMean: return agg_mean(updates);
    case AggregatorKind::kTrMean: return agg_trmean(updates, spec.m);
    case AggregatorKind::kMedian: return agg_median(updates);
    case AggregatorKind::kKrum: return agg_krum(updates, spec.m, spec.multi_k);
    case AggregatorKind::kNormBound: return agg_normbound(updates, spec.threshold);
  }
  throw Error("unknown aggregator");
}

}  // namespace flsim
