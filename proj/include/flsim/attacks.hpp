#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "flsim/aggregation.hpp"
#include "flsim/lbfgs.hpp"
#include "flsim/types.hpp"

namespace flsim {

enum class AttackKind { kNone, kLabelFlip, kStatOpt, kDynOpt, kAdaptiveFld };
enum class DeviationKind { kUnitVector, kSign, kStd };
enum class Knowledge { kFull, kPartial };

AttackKind parse_attack_kind(const std::string& name);
DeviationKind parse_deviation_kind(const std::string& name);
Knowledge parse_knowledge(const std::string& name);
std::string to_string(AttackKind kind);
std::string to_string(DeviationKind kind);
std::string to_string(Knowledge kind);

struct AttackSpec {
  AttackKind kind = AttackKind::kNone;
  double malicious_fraction = 0.2;
  Knowledge knowledge = Knowledge::kFull;
  double gamma = 10.0;  // Stat-Opt scale
  DeviationKind deviation = DeviationKind::kSign;
  double gamma_init = 10.0;  // Dyn-Opt search upper bound
  double gamma_tol = 1e-3;
  /// Stat-Opt sends -gamma * w instead of gamma * w (the alternative reading
  /// of the attack's final-update sign).
  bool literal_stat_opt_sign = false;

  void validate() const;
};

/// y -> C - 1 - y.
std::vector<int> label_flip(const std::vector<int>& labels, int num_classes);

/// Deviation direction from the visible updates:
///   UnitVector: -mean / ||mean||;  Sign: -sign(mean);  Std: -stddev per coordinate.
ParamVector deviation_vector(const std::vector<ParamVector>& visible, DeviationKind kind);

/// gamma * w with w = -sign(mean(visible)), sign(0) = 0.
ParamVector stat_opt(const std::vector<ParamVector>& visible, double gamma, bool literal_sign = false);

struct GammaSearch {
  double gamma = 0.0;
  bool saturated = false;  // predicate held at gamma_init
  bool failed = false;     // predicate never held; gamma = 0
  int evaluations = 0;
};

/// Largest gamma in [0, gamma_init] with predicate(gamma), by bisection that
/// stops once the bracket is narrower than gamma_tol (30 halvings at most).
/// Assumes the predicate is true below some threshold and false above it.
GammaSearch search_gamma(const std::function<bool(double)>& predicate, double gamma_init,
                         double gamma_tol);

/// Whether `crafted`, submitted by `n_malicious` clients next to `others`,
/// gets past `agr`:
///   Krum          the crafted vector is among the selected updates;
///   TrMean/Median every crafted coordinate lies inside the retained values;
///   Mean/NormBound the aggregate moves by at least (n_mal / n) * ||crafted - reference||
///                 relative to the same clients sending `reference`.
bool bypass_predicate(const AggregatorSpec& agr, const std::vector<ParamVector>& others,
                      int n_malicious, const ParamVector& crafted, const ParamVector& reference);

/// AGR parameters clipped so the spec is valid for n inputs.
AggregatorSpec fit_aggregator(const AggregatorSpec& agr, std::size_t n);

struct DynOptResult {
  ParamVector update;
  GammaSearch search;
};

/// mean(visible) + gamma* w, gamma* the largest bypassing scale.
/// `others` are the updates the server sees besides the crafted copies.
DynOptResult dyn_opt(const std::vector<ParamVector>& visible, const std::vector<ParamVector>& others,
                     int n_malicious, const AggregatorSpec& agr, DeviationKind deviation,
                     double gamma_init, double gamma_tol);

struct AdaptiveState {
  ParamVector prev_malicious_update;
  std::map<ClientId, double> good_distance_ranges;
};

/// One step of the anti-FLDetector attack:
///   R_k = ||estimated_k - actual_k||,
///   P   = deviation / ||deviation|| * (1/n_clients) * sum_k R_k,
///   update = prev_malicious_update + hvp_term + P.
/// The returned state carries the new R values and `update` as the next
/// prev_malicious_update.
std::pair<ParamVector, AdaptiveState> adaptive_fld(const AdaptiveState& state,
                                                   const ParamVector& hvp_term,
                                                   const UpdateMap& estimated,
                                                   const UpdateMap& actual,
                                                   const ParamVector& deviation, int n_clients);

/// Everything an adversary can observe when crafting round t.
struct RoundContext {
  int round = 0;
  const ParamVector* global = nullptr;  // theta_t
  const AggregatorSpec* agr = nullptr;
  /// Honest updates of every selected client, malicious ones included.
  const UpdateMap* honest = nullptr;
  std::set<ClientId> malicious_selected;
};

/// Stateful driver that binds an AttackSpec into training rounds.
///
/// craft() returns replacement updates for the selected malicious clients;
/// observe() is fed the finished round so the anti-FLDetector attack can
/// mirror the detector's L-BFGS buffers. reset() clears all state (used when
/// training restarts).
class Adversary {
 public:
  Adversary() = default;
  Adversary(AttackSpec spec, std::set<ClientId> malicious, std::size_t lbfgs_capacity = 10);

  const AttackSpec& spec() const { return spec_; }
  const std::set<ClientId>& malicious() const { return malicious_; }
  bool is_malicious(ClientId id) const { return malicious_.count(id) > 0; }

  UpdateMap craft(const RoundContext& ctx);
  void observe(const ParamVector& global_before, const UpdateMap& sent, const ParamVector& aggregate);
  void reset();

  /// Set when Dyn-Opt could not find any bypassing gamma in some round.
  bool dyn_opt_failed() const { return dyn_opt_failed_; }

 private:
  UpdateMap craft_adaptive(const RoundContext& ctx, const std::vector<ParamVector>& visible);

  AttackSpec spec_;
  std::set<ClientId> malicious_;
  bool dyn_opt_failed_ = false;

  // anti-FLDetector mirror of the server's state
  LbfgsBuffers buffers_{10};
  std::optional<ParamVector> prev_global_;
  std::optional<ParamVector> prev_aggregate_;
  UpdateMap prev_sent_;
  UpdateMap prev_honest_;
  std::map<ClientId, AdaptiveState> adaptive_;
};

/// Convenience wrapper: kind None or LabelFlip yield an empty map.
UpdateMap apply_attack(Adversary& adversary, const RoundContext& ctx);

/// Deterministic choice of round(fraction * N) malicious ids.
std::set<ClientId> choose_malicious(int num_clients, double fraction, std::uint64_t seed);

}  // namespace flsim
