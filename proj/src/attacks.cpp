#include "flsim/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flsim/rng.hpp"

namespace flsim {

AttackKind parse_attack_kind(const std::string& name) {
  if (name == "none") return AttackKind::kNone;
  if (name == "label_flip") return AttackKind::kLabelFlip;
  if (name == "stat_opt") return AttackKind::kStatOpt;
  if (name == "dyn_opt") return AttackKind::kDynOpt;
  if (name == "adaptive_fld") return AttackKind::kAdaptiveFld;
  throw Error("unknown attack '" + name + "'");
}

DeviationKind parse_deviation_kind(const std::string& name) {
  if (name == "unit_vector") return DeviationKind::kUnitVector;
  if (name == "sign") return DeviationKind::kSign;
  if (name == "std") return DeviationKind::kStd;
  throw Error("unknown deviation '" + name + "'");
}

Knowledge parse_knowledge(const std::string& name) {
  if (name == "full") return Knowledge::kFull;
  if (name == "partial") return Knowledge::kPartial;
  throw Error("unknown knowledge mode '" + name + "'");
}

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kNone: return "none";
    case AttackKind::kLabelFlip: return "label_flip";
    case AttackKind::kStatOpt: return "stat_opt";
    case AttackKind::kDynOpt: return "dyn_opt";
    case AttackKind::kAdaptiveFld: return "adaptive_fld";
  }
  return "?";
}

std::string to_string(DeviationKind kind) {
  switch (kind) {
    case DeviationKind::kUnitVector: return "unit_vector";
    case DeviationKind::kSign: return "sign";
    case DeviationKind::kStd: return "std";
  }
  return "?";
}

std::string to_string(Knowledge kind) { return kind == Knowledge::kFull ? "full" : "partial"; }

void AttackSpec::validate() const {
  require(malicious_fraction >= 0.0 && malicious_fraction < 1.0,
          "malicious_fraction must be in [0, 1)");
  require(gamma >= 0.0, "gamma must be >= 0");
  require(gamma_init > 0.0, "gamma_init must be > 0");
  require(gamma_tol > 0.0, "gamma_tol must be > 0");
}

std::vector<int> label_flip(const std::vector<int>& labels, int num_classes) {
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && labels[i] < num_classes, "label out of range");
    out[i] = num_classes - 1 - labels[i];
  }
  return out;
}

namespace {

ParamVector mean_of(const std::vector<ParamVector>& v) {
  require(!v.empty(), "attack needs at least one visible update");
  return agg_mean(v);
}

ParamVector sign_of(const ParamVector& v) {
  return v.unaryExpr([](double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); });
}

}  // namespace

ParamVector deviation_vector(const std::vector<ParamVector>& visible, DeviationKind kind) {
  const ParamVector mean = mean_of(visible);
  switch (kind) {
    case DeviationKind::kUnitVector: {
      const double norm = mean.norm();
      require(norm > 0.0, "unit-vector deviation of a zero mean update");
      return -mean / norm;
    }
    case DeviationKind::kSign:
      return -sign_of(mean);
    case DeviationKind::kStd: {
      ParamVector var = ParamVector::Zero(mean.size());
      for (const auto& u : visible) var += (u - mean).cwiseAbs2();
      var /= static_cast<double>(visible.size());
      return -var.cwiseSqrt();
    }
  }
  throw Error("unknown deviation");
}

ParamVector stat_opt(const std::vector<ParamVector>& visible, double gamma, bool literal_sign) {
  const ParamVector w = -sign_of(mean_of(visible));
  return literal_sign ? ParamVector(-gamma * w) : ParamVector(gamma * w);
}

GammaSearch search_gamma(const std::function<bool(double)>& predicate, double gamma_init,
                         double gamma_tol) {
  require(gamma_init > 0.0 && gamma_tol > 0.0, "gamma search needs positive init and tolerance");
  GammaSearch r;
  auto eval = [&](double g) {
    ++r.evaluations;
    return predicate(g);
  };
  if (eval(gamma_init)) {
    r.gamma = gamma_init;
    r.saturated = true;
    return r;
  }
  double lo = 0.0, hi = gamma_init;
  bool found = false;
  for (int it = 0; it < 30 && hi - lo > gamma_tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (eval(mid)) {
      lo = mid;
      found = true;
    } else {
      hi = mid;
    }
  }
  if (!found && !eval(lo)) r.failed = true;
  r.gamma = r.failed ? 0.0 : lo;
  return r;
}

AggregatorSpec fit_aggregator(const AggregatorSpec& agr, std::size_t n) {
  AggregatorSpec out = agr;
  const int ni = static_cast<int>(n);
  if (agr.kind == AggregatorKind::kTrMean) out.m = std::max(0, std::min(agr.m, (ni - 1) / 2));
  if (agr.kind == AggregatorKind::kKrum) {
    out.m = std::max(0, std::min(agr.m, (ni - 3) / 2));
    out.multi_k = std::max(1, std::min(agr.multi_k, ni));
  }
  return out;
}

bool bypass_predicate(const AggregatorSpec& agr, const std::vector<ParamVector>& others,
                      int n_malicious, const ParamVector& crafted, const ParamVector& reference) {
  require(n_malicious >= 1, "bypass predicate needs at least one malicious update");
  std::vector<ParamVector> all = others;
  for (int i = 0; i < n_malicious; ++i) all.push_back(crafted);
  const std::size_t n = all.size();
  const AggregatorSpec spec = fit_aggregator(agr, n);

  switch (agr.kind) {
    case AggregatorKind::kKrum: {
      if (n < 3) return false;
      const auto sel = krum_select(all, spec.m, spec.multi_k);
      return std::any_of(sel.begin(), sel.end(), [&](std::size_t i) { return i >= others.size(); });
    }
    case AggregatorKind::kTrMean:
    case AggregatorKind::kMedian: {
      std::size_t lo = 0, hi = 0;
      if (agr.kind == AggregatorKind::kTrMean) {
        lo = static_cast<std::size_t>(spec.m);
        hi = n - 1 - static_cast<std::size_t>(spec.m);
      } else {
        lo = (n - 1) / 2;
        hi = n / 2;
      }
      for (Eigen::Index j = 0; j < crafted.size(); ++j) {
        const auto col = sorted_column(all, j);
        if (crafted[j] < col[lo] || crafted[j] > col[hi]) return false;
      }
      return true;
    }
    case AggregatorKind::kMean:
    case AggregatorKind::kNormBound: {
      std::vector<ParamVector> ref = others;
      for (int i = 0; i < n_malicious; ++i) ref.push_back(reference);
      const double moved = (aggregate(spec, all) - aggregate(spec, ref)).norm();
      const double target =
          static_cast<double>(n_malicious) / static_cast<double>(n) * (crafted - reference).norm();
      return moved >= target * (1.0 - 1e-9);
    }
  }
  return false;
}

DynOptResult dyn_opt(const std::vector<ParamVector>& visible, const std::vector<ParamVector>& others,
                     int n_malicious, const AggregatorSpec& agr, DeviationKind deviation,
                     double gamma_init, double gamma_tol) {
  const ParamVector mean = mean_of(visible);
  const ParamVector w = deviation_vector(visible, deviation);
  auto pred = [&](double g) {
    return bypass_predicate(agr, others, n_malicious, ParamVector(mean + g * w), mean);
  };
  DynOptResult r;
  r.search = search_gamma(pred, gamma_init, gamma_tol);
  r.update = mean + r.search.gamma * w;
  return r;
}

std::pair<ParamVector, AdaptiveState> adaptive_fld(const AdaptiveState& state,
                                                   const ParamVector& hvp_term,
                                                   const UpdateMap& estimated,
                                                   const UpdateMap& actual,
                                                   const ParamVector& deviation, int n_clients) {
  require(estimated.size() == actual.size(), "estimated and actual updates differ in keys");
  require(n_clients >= 1, "adaptive attack needs n_clients >= 1");
  const double dnorm = deviation.norm();
  require(dnorm > 0.0, "degenerate (zero) deviation vector");
  require(state.prev_malicious_update.size() == hvp_term.size(),
          "previous malicious update length mismatch");

  AdaptiveState next;
  double total = 0.0;
  for (const auto& [id, est] : estimated) {
    const auto it = actual.find(id);
    require(it != actual.end(), "estimated and actual updates differ in keys");
    const double r = (est - it->second).norm();
    next.good_distance_ranges[id] = r;
    total += r;
  }
  const ParamVector perturbation = deviation / dnorm * (total / n_clients);
  next.prev_malicious_update = state.prev_malicious_update + hvp_term + perturbation;
  return {next.prev_malicious_update, next};
}

Adversary::Adversary(AttackSpec spec, std::set<ClientId> malicious, std::size_t lbfgs_capacity)
    : spec_(spec), malicious_(std::move(malicious)), buffers_(lbfgs_capacity) {
  spec_.validate();
}

void Adversary::reset() {
  dyn_opt_failed_ = false;
  buffers_.clear();
  prev_global_.reset();
  prev_aggregate_.reset();
  prev_sent_.clear();
  prev_honest_.clear();
  adaptive_.clear();
}

UpdateMap Adversary::craft(const RoundContext& ctx) {
  require(ctx.honest != nullptr && ctx.agr != nullptr && ctx.global != nullptr,
          "incomplete round context");
  UpdateMap out;
  if (spec_.kind == AttackKind::kNone || spec_.kind == AttackKind::kLabelFlip) return out;
  if (ctx.malicious_selected.empty()) return out;

  std::vector<ParamVector> benign, own;
  for (const auto& [id, u] : *ctx.honest) (ctx.malicious_selected.count(id) ? own : benign).push_back(u);
  const bool full = spec_.knowledge == Knowledge::kFull && !benign.empty();
  const std::vector<ParamVector>& visible = full ? benign : own;
  const int n_mal = static_cast<int>(ctx.malicious_selected.size());

  switch (spec_.kind) {
    case AttackKind::kStatOpt: {
      const ParamVector u = stat_opt(visible, spec_.gamma, spec_.literal_stat_opt_sign);
      for (ClientId id : ctx.malicious_selected) out.emplace(id, u);
      break;
    }
    case AttackKind::kDynOpt: {
      const auto r = dyn_opt(visible, visible, n_mal, *ctx.agr, spec_.deviation, spec_.gamma_init,
                             spec_.gamma_tol);
      if (r.search.failed) dyn_opt_failed_ = true;
      for (ClientId id : ctx.malicious_selected) out.emplace(id, r.update);
      break;
    }
    case AttackKind::kAdaptiveFld:
      out = craft_adaptive(ctx, visible);
      break;
    default:
      break;
  }
  return out;
}

UpdateMap Adversary::craft_adaptive(const RoundContext& ctx, const std::vector<ParamVector>& visible) {
  UpdateMap out;
  const UpdateMap& honest = *ctx.honest;
  if (!prev_global_) {
    prev_honest_ = honest;
    return out;  // nothing to mirror yet: behave honestly
  }
  const ParamVector hvp = lbfgs_hvp(buffers_, *ctx.global - *prev_global_);

  const bool full = spec_.knowledge == Knowledge::kFull;
  UpdateMap estimated, actual;
  for (const auto& [id, u] : honest) {
    const bool mal = ctx.malicious_selected.count(id) > 0;
    if (full == mal) continue;  // full: benign clients; partial: own clients
    const UpdateMap& prev = full ? prev_sent_ : prev_honest_;
    const auto it = prev.find(id);
    if (it == prev.end()) continue;
    estimated.emplace(id, it->second + hvp);
    actual.emplace(id, u);
  }
  const ParamVector dev = deviation_vector(visible, spec_.deviation);
  if (estimated.empty() || dev.norm() == 0.0) {
    prev_honest_ = honest;
    return out;
  }
  for (ClientId id : ctx.malicious_selected) {
    AdaptiveState state;
    const auto it = prev_sent_.find(id);
    state.prev_malicious_update = it != prev_sent_.end() ? it->second : honest.at(id);
    auto [update, next] = adaptive_fld(state, hvp, estimated, actual, dev,
                                       static_cast<int>(estimated.size()));
    adaptive_[id] = std::move(next);
    out.emplace(id, std::move(update));
  }
  prev_honest_ = honest;
  return out;
}

void Adversary::observe(const ParamVector& global_before, const UpdateMap& sent,
                        const ParamVector& aggregate) {
  if (spec_.kind != AttackKind::kAdaptiveFld) return;
  if (prev_global_ && prev_aggregate_)
    buffers_.push(global_before - *prev_global_, aggregate - *prev_aggregate_);
  prev_global_ = global_before;
  prev_aggregate_ = aggregate;
  prev_sent_ = sent;
}

UpdateMap apply_attack(Adversary& adversary, const RoundContext& ctx) { return adversary.craft(ctx); }

std::set<ClientId> choose_malicious(int num_clients, double fraction, std::uint64_t seed) {
  require(fraction >= 0.0 && fraction < 1.0, "malicious fraction must be in [0, 1)");
  const int count = static_cast<int>(std::lround(fraction * num_clients));
  std::vector<int> ids(static_cast<std::size_t>(num_clients));
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(derive_seed(seed, Stream::kMalicious));
  shuffle(ids, rng);
  return {ids.begin(), ids.begin() + count};
}

}  // namespace flsim
