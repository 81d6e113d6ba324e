#include "flsim/fldetector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "flsim/rng.hpp"

namespace flsim {

void DetectorConfig::validate() const {
  require(window >= 1, "detector window must be >= 1");
  require(s_max >= 0, "s_max must be >= 0");
  require(k_max >= 2, "k_max must be >= 2");
  require(gap_refs >= 5, "gap statistic needs at least 5 reference draws");
}

PredictionResult predict_updates(const UpdateMap& previous, const std::vector<ClientId>& current,
                                 const LbfgsBuffers& buffers, const ParamVector& model_delta) {
  PredictionResult r;
  const ParamVector hvp = lbfgs_hvp(buffers, model_delta);
  for (ClientId id : current) {
    const auto it = previous.find(id);
    if (it == previous.end()) {
      r.skipped.push_back(id);
      continue;
    }
    r.predicted.emplace(id, it->second + hvp);
  }
  return r;
}

void suspicious_scores(const UpdateMap& predicted, const UpdateMap& actual, int round, int window,
                       bool normalize, SuspiciousScores& scores) {
  require(window >= 1, "score window must be >= 1");
  auto& raw = scores.raw[round];
  auto& norm = scores.per_round[round];
  raw.clear();
  norm.clear();
  double total = 0.0;
  for (const auto& [id, p] : predicted) {
    const auto it = actual.find(id);
    require(it != actual.end(), "suspicious scores: missing actual update for a predicted client");
    const double d = (p - it->second).norm();
    raw[id] = d;
    total += d;
  }
  require(std::isfinite(total), "suspicious scores: non-finite distance");
  for (const auto& [id, d] : raw) {
    if (!normalize) norm[id] = d;
    else norm[id] = total > 0.0 ? d / total : 1.0 / static_cast<double>(raw.size());
  }

  for (const auto& [id, s] : norm) {
    double sum = 0.0;
    int count = 0;
    for (auto it = scores.per_round.rbegin(); it != scores.per_round.rend() && count < window; ++it) {
      const auto found = it->second.find(id);
      if (found == it->second.end()) continue;
      sum += found->second;
      ++count;
    }
    scores.averaged[id] = sum / count;
  }
}

KMeans1D kmeans_1d(const std::vector<double>& values, int k) {
  require(!values.empty(), "k-means needs at least one point");
  require(k >= 1, "k-means needs k >= 1");
  const std::size_t n = values.size();
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = values[order[i]];

  // cost[i][j]: SSE of the sorted run x[i..j]
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double mean = 0.0;
      for (std::size_t t = i; t <= j; ++t) mean += x[t];
      mean /= static_cast<double>(j - i + 1);
      double sse = 0.0;
      for (std::size_t t = i; t <= j; ++t) sse += (x[t] - mean) * (x[t] - mean);
      cost[i][j] = sse;
    }
  }

  const double inf = std::numeric_limits<double>::infinity();
  // best[c][j]: min SSE of x[0..j] in c+1 clusters; start[c][j]: first index of the last cluster
  std::vector<std::vector<double>> best(kk, std::vector<double>(n, inf));
  std::vector<std::vector<std::size_t>> start(kk, std::vector<std::size_t>(n, 0));
  for (std::size_t j = 0; j < n; ++j) best[0][j] = cost[0][j];
  for (std::size_t c = 1; c < kk; ++c) {
    for (std::size_t j = c; j < n; ++j) {
      for (std::size_t i = c; i <= j; ++i) {
        const double v = best[c - 1][i - 1] + cost[i][j];
        if (v < best[c][j]) {
          best[c][j] = v;
          start[c][j] = i;
        }
      }
    }
  }

  KMeans1D r;
  r.sse = best[kk - 1][n - 1];
  r.assignment.assign(n, 0);
  r.centers.assign(kk, 0.0);
  std::size_t hi = n;
  for (std::size_t c = kk; c-- > 0;) {
    const std::size_t lo = c == 0 ? 0 : start[c][hi - 1];
    double mean = 0.0;
    for (std::size_t t = lo; t < hi; ++t) {
      r.assignment[order[t]] = static_cast<int>(c);
      mean += x[t];
    }
    r.centers[c] = mean / static_cast<double>(hi - lo);
    hi = lo;
  }
  return r;
}

int gap_statistic_k(const std::vector<double>& values, int k_max, int refs, std::uint64_t seed) {
  require(values.size() >= 2, "gap statistic needs at least 2 values");
  require(k_max >= 1, "k_max must be >= 1");
  require(refs >= 1, "gap statistic needs reference draws");
  const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn_it, hi = *mx_it;
  if (!(hi > lo)) return 1;

  const std::size_t n = values.size();
  const int kmax = std::min<int>(k_max, static_cast<int>(n));
  const int kcap = std::min<int>(kmax + 1, static_cast<int>(n));
  const double floor = std::max(1e-300, 1e-12 * (hi - lo) * (hi - lo) * static_cast<double>(n));
  auto log_w = [&](const std::vector<double>& v, int k) {
    return std::log(std::max(floor, kmeans_1d(v, k).sse));
  };

  std::vector<double> gap(static_cast<std::size_t>(kcap) + 1), s(static_cast<std::size_t>(kcap) + 1);
  Rng rng(seed);
  std::vector<std::vector<double>> ref_logs(static_cast<std::size_t>(refs));
  for (auto& row : ref_logs) {
    std::vector<double> ref(n);
    for (auto& v : ref) v = lo + (hi - lo) * uniform01(rng);
    for (int k = 1; k <= kcap; ++k) row.push_back(log_w(ref, k));
  }
  for (int k = 1; k <= kcap; ++k) {
    double mean = 0.0;
    for (const auto& row : ref_logs) mean += row[static_cast<std::size_t>(k - 1)];
    mean /= refs;
    double var = 0.0;
    for (const auto& row : ref_logs) {
      const double d = row[static_cast<std::size_t>(k - 1)] - mean;
      var += d * d;
    }
    var /= refs;
    gap[static_cast<std::size_t>(k)] = mean - log_w(values, k);
    s[static_cast<std::size_t>(k)] = std::sqrt(var) * std::sqrt(1.0 + 1.0 / refs);
  }
  for (int k = 1; k < kcap && k <= kmax; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    if (gap[ku] >= gap[ku + 1] - s[ku + 1]) return k;
  }
  return kmax;
}

void fill_rates(DetectionOutcome& outcome, const std::set<ClientId>& clients,
                const std::set<ClientId>& malicious) {
  std::size_t benign = 0, false_pos = 0, mal = 0, missed = 0;
  for (ClientId id : clients) {
    const bool is_mal = malicious.count(id) > 0;
    const bool flagged = outcome.flagged.count(id) > 0;
    if (is_mal) {
      ++mal;
      if (!flagged) ++missed;
    } else {
      ++benign;
      if (flagged) ++false_pos;
    }
  }
  outcome.fpr = benign ? static_cast<double>(false_pos) / static_cast<double>(benign) : 0.0;
  outcome.fnr = mal ? static_cast<double>(missed) / static_cast<double>(mal) : 0.0;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows) {
  out << "round,client_id,raw_distance,normalized_score,averaged_score,flagged\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%s\n", r.round, r.client, r.raw_distance,
                  r.normalized_score, r.averaged_score, r.flagged ? "true" : "false");
    out << buf;
  }
}

FLDetector::FLDetector(DetectorConfig config)
    : config_(config), buffers_(static_cast<std::size_t>(std::max(0, config.s_max))) {
  config_.validate();
}

void FLDetector::reset() {
  buffers_.clear();
  prev_global_.reset();
  prev_aggregate_.reset();
  prev_updates_.clear();
  scores_ = {};
  trace_.clear();
}

std::optional<std::set<ClientId>> FLDetector::observe(const RoundRecord& record) {
  std::optional<std::set<ClientId>> flagged;
  const int t = record.round;
  if (prev_global_) {
    const auto pred = predict_updates(prev_updates_, record.selected, buffers_,
                                      record.global_before - *prev_global_);
    if (!pred.predicted.empty()) {
      suspicious_scores(pred.predicted, record.updates, t, config_.window, config_.normalize, scores_);
      const std::size_t first_row = trace_.size();
      std::vector<ClientId> ids;
      std::vector<double> averaged;
      for (const auto& [id, p] : pred.predicted) {
        ids.push_back(id);
        averaged.push_back(scores_.averaged.at(id));
        trace_.push_back({t, id, scores_.raw.at(t).at(id), scores_.per_round.at(t).at(id),
                          scores_.averaged.at(id), false});
      }
      if (t >= config_.effective_start() && averaged.size() >= 2) {
        const int k = gap_statistic_k(averaged, config_.k_max, config_.gap_refs,
                                      derive_seed(config_.seed, Stream::kDetector, static_cast<std::uint64_t>(t)));
        if (k >= 2) {
          const auto km = kmeans_1d(averaged, 2);
          std::set<ClientId> out;
          for (std::size_t i = 0; i < ids.size(); ++i) {
            if (km.assignment[i] == 1) {
              out.insert(ids[i]);
              trace_[first_row + i].flagged = true;
            }
          }
          flagged = std::move(out);
        }
      }
    }
  }
  if (prev_global_ && prev_aggregate_)
    buffers_.push(record.global_before - *prev_global_, record.aggregate - *prev_aggregate_);
  prev_global_ = record.global_before;
  prev_aggregate_ = record.aggregate;
  prev_updates_ = record.updates;
  return flagged;
}

DetectionRun detect_and_restart(const DetectorConfig& config, const Federation& fed,
                                Adversary* adversary, const ParamVector& initial) {
  require(fed.fl.selection == Selection::kCrossSilo,
          "FLDetector requires the cross-silo setting (every client every round)");
  FLDetector detector(config);
  std::set<ClientId> flagged;
  int detection_round = -1;
  RoundHook hook = [&](const RoundRecord& rec, const ParamVector&) {
    if (auto f = detector.observe(rec)) {
      flagged = std::move(*f);
      detection_round = rec.round;
      return false;
    }
    return true;
  };
  if (adversary) adversary->reset();

  DetectionRun run;
  run.first_history = run_training(fed, adversary, initial, {hook});
  run.trace = detector.trace();
  run.outcome.detection_round = detection_round;

  const auto eligible = eligible_clients(fed);
  const std::set<ClientId> clients(eligible.begin(), eligible.end());
  if (detection_round >= 0) {
    run.outcome.flagged = flagged;
    run.outcome.restarted = true;
    Federation next = fed;
    next.active.clear();
    for (ClientId id : clients)
      if (!flagged.count(id)) next.active.insert(id);
    if (adversary) adversary->reset();
    run.history = run_training(next, adversary, initial);
  } else {
    run.history = run.first_history;
  }
  fill_rates(run.outcome, clients, adversary ? adversary->malicious() : std::set<ClientId>{});
  return run;
}

}  // namespace flsim
