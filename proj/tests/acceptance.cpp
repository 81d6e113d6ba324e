// Acceptance checks: one PASS/FAIL line per criterion, exit code 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "flsim/experiment.hpp"
#include "flsim/parallel.hpp"

using namespace flsim;
using nlohmann::json;

namespace {

// Tolerances and budgets.
constexpr double kHvpSecantTol = 1e-6;
constexpr double kHvpLinearTol = 1e-9;
constexpr double kGradTol = 1e-4;
constexpr double kReplayTol = 1e-12;
constexpr double kSmallImpact = 0.05;  // |TrMean impact| counts as small
constexpr int kSeeds = 5;

struct Verdict {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, double budget_s, const std::function<Verdict()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = fn();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > budget_s) {
    v.pass = false;
    v.detail += " (over time budget)";
  }
  if (!v.pass) ++failures;
  std::printf("[%s] %2d %s: %s [%.2fs / %.0fs]\n", v.pass ? "PASS" : "FAIL", id, name.c_str(), v.detail.c_str(),
              secs, budget_s);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

ParamVector gaussian(std::mt19937_64& rng, Eigen::Index d, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  ParamVector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = n(rng);
  return v;
}

double rel(const ParamVector& a, const ParamVector& b) { return (a - b).norm() / std::max(1e-300, b.norm()); }

// ---------------------------------------------------------------- criterion 1
Verdict aggregator_oracles() {
  std::mt19937_64 rng(101);
  int mismatches = 0, mean_mismatches = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t n = 1 + rng() % 15;
    const auto d = static_cast<Eigen::Index>(1 + rng() % 50);
    std::vector<ParamVector> u;
    for (std::size_t i = 0; i < n; ++i) u.push_back(gaussian(rng, d));
    const int m = static_cast<int>(rng() % ((n + 1) / 2));
    ParamVector tr(d), med(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      std::vector<double> col;
      for (const auto& v : u) col.push_back(v[j]);
      std::sort(col.begin(), col.end());
      double s = 0;
      for (std::size_t i = static_cast<std::size_t>(m); i < n - static_cast<std::size_t>(m); ++i) s += col[i];
      tr[j] = s / static_cast<double>(n - 2 * static_cast<std::size_t>(m));
      med[j] = n % 2 ? col[n / 2] : (col[n / 2 - 1] + col[n / 2]) / 2;
    }
    mismatches += agg_trmean(u, m) != tr;
    mismatches += agg_median(u) != med;
    mean_mismatches += agg_trmean(u, 0) != agg_mean(u);
  }
  return {mismatches == 0 && mean_mismatches == 0,
          "1000 instances, oracle mismatches = " + std::to_string(mismatches) +
              ", TrMean(m=0) vs Mean bit mismatches = " + std::to_string(mean_mismatches)};
}

// ---------------------------------------------------------------- criterion 2
Verdict hvp_exactness() {
  std::mt19937_64 rng(202);
  double worst_secant = 0, worst_linear = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const int d = 2 + static_cast<int>(rng() % 29);
    Eigen::MatrixXd g(d, d);
    for (int i = 0; i < d; ++i) g.col(i) = gaussian(rng, d);
    const Eigen::MatrixXd a = g * g.transpose() + d * Eigen::MatrixXd::Identity(d, d);
    // conjugate-gradient steps give exact, A-conjugate secant pairs
    LbfgsBuffers buf(10);
    ParamVector x = gaussian(rng, d), r = -(a * x), p = r;
    for (int k = 0; k < std::min(d, 10); ++k) {
      const ParamVector ap = a * p;
      const double alpha = r.squaredNorm() / p.dot(ap);
      const ParamVector s = alpha * p;
      buf.push(s, a * s);
      const ParamVector r2 = r - alpha * ap;
      p = r2 + (r2.squaredNorm() / r.squaredNorm()) * p;
      r = r2;
    }
    for (const auto& [s, y] : buf.pairs()) worst_secant = std::max(worst_secant, rel(lbfgs_hvp(buf, s), y));
    const ParamVector v = gaussian(rng, d), w = gaussian(rng, d);
    const double ca = 0.3 + inst, cb = -1.7;
    worst_linear = std::max(worst_linear, rel(lbfgs_hvp(buf, ParamVector(ca * v + cb * w)),
                                              ParamVector(ca * lbfgs_hvp(buf, v) + cb * lbfgs_hvp(buf, w))));
  }
  return {worst_secant <= kHvpSecantTol && worst_linear <= kHvpLinearTol,
          fmt("max secant rel err %.2e (tol %.0e), max linearity rel err %.2e (tol %.0e)", worst_secant,
              kHvpSecantTol, worst_linear, kHvpLinearTol)};
}

// ---------------------------------------------------------------- criterion 3
Verdict gradient_check() {
  std::mt19937_64 rng(303);
  double worst = 0;
  for (int inst = 0; inst < 20; ++inst) {
    const int in = 2 + inst % 5, classes = 2 + inst % 4, hidden = inst % 2 ? 0 : 2 + inst % 5;
    const ModelSpec spec{in, hidden, classes, inst % 3 == 0 ? Activation::kTanh : Activation::kRelu};
    Batch b;
    b.features = Eigen::MatrixXd(9, in);
    for (int i = 0; i < 9; ++i) b.features.row(i) = gaussian(rng, in).transpose();
    for (int i = 0; i < 9; ++i) b.labels.push_back(static_cast<int>(rng() % classes));
    const ParamVector p = gaussian(rng, static_cast<Eigen::Index>(spec.param_count()), 0.5);
    const ParamVector g = loss_and_grad(p, b, spec).grad;
    ParamVector fd(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      ParamVector hi = p, lo = p;
      hi[i] += 1e-6;
      lo[i] -= 1e-6;
      fd[i] = (loss(hi, b, spec) - loss(lo, b, spec)) / 2e-6;
    }
    worst = std::max(worst, rel(g, fd));
  }
  return {worst <= kGradTol, fmt("20 instances, max relative error %.2e (tol %.0e)", worst, kGradTol)};
}

// Base configuration shared by the qualitative scenarios.
json scenario(int clients, int rounds) {
  return {{"dataset", {{"kind", "synthetic"}, {"num_classes", 10}, {"per_class", 100}, {"input_dim", 10}, {"sep", 5}}},
          {"partition", {{"kind", "iid"}, {"num_clients", clients}}},
          {"fl", {{"algorithm", "fedsgd"}, {"rounds", rounds}, {"server_lr", 1.0}, {"local_lr", 0.5}, {"batch_size", 16}}},
          {"agr", {{"kind", "mean"}}},
          {"attack", {{"kind", "stat_opt"}, {"malicious_fraction", 0.2}, {"gamma", 0.2}}},
          {"seed", 1}};
}

// ---------------------------------------------------------------- criterion 4
Verdict replay_identity() {
  json j = scenario(20, 50);
  j["fl"]["full_batch"] = true;
  j["recovery"] = {{"enabled", true}, {"warmup", 1}, {"correction", 1}, {"finetune", 0}};
  const ExperimentConfig cfg = parse_config(j);
  const Setup s = build_setup(cfg, 1);
  Adversary adv = make_adversary(cfg, s);
  const auto poisoned = run_training(s.fed, &adv, s.initial);
  RecoveryConfig rc = cfg.recovery.config;
  for (int id = 0; id < 20; ++id)
    if (!s.malicious.count(id)) rc.believed_benign.insert(id);
  const auto [model, st] = recover(HistoryStore::from_training(poisoned, 20), rc, s.fed, nullptr, s.initial);
  Federation benign = s.fed;
  benign.active = rc.believed_benign;
  const auto retrain = run_training(benign, nullptr, s.initial);
  const double diff = (model - retrain.final_model).cwiseAbs().maxCoeff();
  const double poisoned_gap = (poisoned.final_model - retrain.final_model).cwiseAbs().maxCoeff();
  return {diff <= kReplayTol && st.exact_rounds == 50,
          fmt("max |recovered - retrained| = %.2e (tol %.0e); poisoned model differed by %.2e", diff, kReplayTol,
              poisoned_gap)};
}

// ---------------------------------------------------------------- criterion 5
Verdict exact_bound() {
  RecoveryConfig rc;
  rc.warmup = 10;
  rc.correction = 10;
  rc.finetune = 5;
  int counted = 0;
  for (int t = 0; t < 100; ++t) counted += is_exact_round(t, 100, rc);
  const int formula = exact_updates_lower_bound(100, 10, 10, 5);
  return {counted == 24 && formula == 24,
          "counted exact rounds = " + std::to_string(counted) + ", formula = " + std::to_string(formula) + " (expected 24)"};
}

// ---------------------------------------------------------------- criterion 6
Verdict detection_contrast() {
  json j = scenario(20, 50);
  j["fl"]["full_batch"] = true;
  j["agr"] = {{"kind", "trmean"}, {"m", 4}};
  j["attack"]["gamma"] = 10.0;
  j["detector"] = {{"enabled", true}};
  double fpr = 0, fnr = 0, adaptive_fnr = 0;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    const auto r = run_single(parse_config(j), static_cast<std::uint64_t>(seed), "", default_threads());
    fpr += r.metrics.detection->fpr / kSeeds;
    fnr += r.metrics.detection->fnr / kSeeds;
  }
  j["attack"]["kind"] = "adaptive_fld";
  for (int seed = 1; seed <= kSeeds; ++seed)
    adaptive_fnr += run_single(parse_config(j), static_cast<std::uint64_t>(seed), "", default_threads())
                        .metrics.detection->fnr / kSeeds;
  return {fpr == 0.0 && fnr == 0.0 && adaptive_fnr > 0.0,
          fmt("Stat-Opt mean FPR %.3f FNR %.3f; adaptive mean FNR %.3f (5 seeds)", fpr, fnr, adaptive_fnr)};
}

double mean_impact(const json& j) {
  double total = 0;
  for (int seed = 1; seed <= kSeeds; ++seed)
    total += run_single(parse_config(j), static_cast<std::uint64_t>(seed), "", default_threads()).metrics.attack_impact;
  return total / kSeeds;
}

// ---------------------------------------------------------------- criterion 7
Verdict robustness_ordering() {
  json j = scenario(20, 30);
  const double mean_sgd = mean_impact(j);
  json tr = j;
  tr["agr"] = {{"kind", "trmean"}, {"m", 4}};
  const double trmean = mean_impact(tr);
  json avg = j;
  avg["fl"]["algorithm"] = "fedavg";
  const double mean_avg = mean_impact(avg);
  return {mean_sgd > trmean && std::abs(trmean) <= kSmallImpact && mean_avg < mean_sgd,
          fmt("impact Mean %.3f > TrMean %.3f (small: |.| <= %.2f)", mean_sgd, trmean, kSmallImpact) +
              fmt("; FedAvg %.3f < FedSGD %.3f (Mean AGR, 5 seeds)", mean_avg, mean_sgd)};
}

// ---------------------------------------------------------------- criterion 8
Verdict fraction_monotonicity() {
  json j = scenario(200, 30);
  j["dataset"]["per_class"] = 240;
  j["fl"]["selection"] = "cross_device";
  j["fl"]["selected_per_round"] = 20;
  std::vector<double> impacts;
  for (double f : {0.2, 0.1, 0.05, 0.0}) {
    j["attack"]["malicious_fraction"] = f;
    impacts.push_back(mean_impact(j));
  }
  bool ok = true;
  for (std::size_t i = 1; i < impacts.size(); ++i) ok = ok && impacts[i] <= impacts[i - 1];
  return {ok, fmt("impact at 20%% %.3f, 10%% %.3f, 5%% %.3f, 0%% %.3f", impacts[0], impacts[1], impacts[2], impacts[3])};
}

// ---------------------------------------------------------------- criterion 9
Verdict metric_identities() {
  std::mt19937_64 rng(909);
  int bad_balanced = 0, bad_class = 0, bad_client = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const int c = 2 + static_cast<int>(rng() % 9);
    const int k = 1 + static_cast<int>(rng() % 25);
    std::vector<int> labels, preds;
    for (int y = 0; y < c; ++y)
      for (int i = 0; i < k; ++i) {
        labels.push_back(y);
        preds.push_back(rng() % 2 ? y : static_cast<int>(rng() % c));
      }
    bad_balanced += per_class_and_mean(preds, labels, c).mean != overall_accuracy(preds, labels);

    // unbalanced labels split over random "clients"
    const std::size_t n = 5 + rng() % 400;
    const int clients = 1 + static_cast<int>(rng() % 12);
    std::vector<int> l2(n), p2(n), owner(n);
    for (std::size_t i = 0; i < n; ++i) {
      l2[i] = static_cast<int>(rng() % c);
      p2[i] = rng() % 3 ? l2[i] : static_cast<int>(rng() % c);
      owner[i] = static_cast<int>(rng() % clients);
    }
    const long long correct = std::llround(overall_accuracy(p2, l2) * static_cast<double>(n));
    const auto pc = per_class_and_mean(p2, l2, c);
    long long by_class = 0;
    for (int y = 0; y < c; ++y)
      if (pc.per_class[y]) by_class += std::llround(*pc.per_class[y] * pc.counts[y]);
    bad_class += by_class != correct;
    long long by_client = 0, sizes = 0;
    for (int o = 0; o < clients; ++o) {
      std::vector<int> lo, po;
      for (std::size_t i = 0; i < n; ++i)
        if (owner[i] == o) {
          lo.push_back(l2[i]);
          po.push_back(p2[i]);
        }
      if (lo.empty()) continue;
      by_client += std::llround(overall_accuracy(po, lo) * static_cast<double>(lo.size()));
      sizes += static_cast<long long>(lo.size());
    }
    bad_client += by_client != correct || sizes != static_cast<long long>(n);
  }
  return {bad_balanced == 0 && bad_class == 0 && bad_client == 0,
          "100 prediction sets; violations: balanced " + std::to_string(bad_balanced) + ", per-class " +
              std::to_string(bad_class) + ", per-client " + std::to_string(bad_client)};
}

// --------------------------------------------------------------- criterion 10
Verdict imperfect_detection() {
  json j = scenario(20, 50);
  j["fl"]["full_batch"] = true;
  j["recovery"] = {{"enabled", true}, {"warmup", 5}, {"correction", 5}, {"finetune", 5}, {"inject_rate", 0.0}};
  auto recovered = [&](double rate) {
    j["recovery"]["inject_rate"] = rate;
    double acc = 0;
    for (int seed = 1; seed <= kSeeds; ++seed)
      acc += run_single(parse_config(j), static_cast<std::uint64_t>(seed), "", default_threads())
                 .recovered_metrics->overall_acc / kSeeds;
    return acc;
  };
  const double perfect = recovered(0.0), noisy = recovered(0.5);
  return {noisy < perfect, fmt("recovered accuracy FNR=FPR=0: %.3f, FNR=FPR=0.5: %.3f (5 seeds)", perfect, noisy)};
}

// --------------------------------------------------------------- criterion 11
Verdict determinism() {
  std::vector<std::pair<std::string, json>> pipelines;
  json plain = scenario(20, 20);
  pipelines.emplace_back("train", plain);
  json det = plain;
  det["fl"]["full_batch"] = true;
  det["agr"] = {{"kind", "trmean"}, {"m", 4}};
  det["detector"] = {{"enabled", true}};
  det["attack"]["kind"] = "adaptive_fld";
  pipelines.emplace_back("detect", det);
  json rec = plain;
  rec["attack"]["kind"] = "dyn_opt";
  rec["agr"] = {{"kind", "median"}};
  rec["recovery"] = {{"enabled", true}, {"warmup", 3}, {"correction", 4}, {"finetune", 3}, {"inject_rate", 0.25},
                     {"log_estimation_error", true}};
  pipelines.emplace_back("recover", rec);
  json dev = scenario(100, 15);
  dev["fl"]["selection"] = "cross_device";
  dev["fl"]["selected_per_round"] = 10;
  dev["fl"]["algorithm"] = "fedavg";
  dev["partition"] = {{"kind", "dirichlet"}, {"num_clients", 100}, {"alpha", 0.5}};
  dev["agr"] = {{"kind", "krum"}, {"m", 2}};
  pipelines.emplace_back("cross-device", dev);

  int diffs = 0;
  for (const auto& [name, j] : pipelines) {
    const auto cfg = parse_config(j);
    const std::string ref = stable_summary(run_single(cfg, 7, "", 1).summary);
    if (stable_summary(run_single(cfg, 7, "", 1).summary) != ref) ++diffs;
    if (stable_summary(run_single(cfg, 7, "", 4).summary) != ref) ++diffs;
  }
  return {diffs == 0, std::to_string(pipelines.size()) + " pipelines x {rerun, 4 threads}: " +
                          std::to_string(diffs) + " summary differences"};
}

}  // namespace

int main() {
  report(1, "aggregator oracles", 10, aggregator_oracles);
  report(2, "L-BFGS HVP exactness", 5, hvp_exactness);
  report(3, "gradient correctness", 10, gradient_check);
  report(4, "FedRecover replay identity", 60, replay_identity);
  report(5, "exact-update bound", 1, exact_bound);
  report(6, "detection clean/attacked contrast", 300, detection_contrast);
  report(7, "robustness ordering", 300, robustness_ordering);
  report(8, "malicious-fraction monotonicity", 600, fraction_monotonicity);
  report(9, "metric identities", 5, metric_identities);
  report(10, "imperfect-detection degradation", 300, imperfect_detection);
  report(11, "determinism and thread invariance", 120, determinism);
  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
