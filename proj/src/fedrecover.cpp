#include "flsim/fedrecover.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "flsim/parallel.hpp"
#include "flsim/rng.hpp"

namespace flsim {

std::size_t HistoryStore::update_count() const {
  std::size_t n = 0;
  for (const auto& u : updates) n += u.size();
  return n;
}

void HistoryStore::validate() const {
  require(globals.size() == updates.size(), "history: globals and updates differ in round count");
  for (const auto& g : globals) require(static_cast<std::size_t>(g.size()) == dim, "history: bad global length");
  for (const auto& round : updates)
    for (const auto& [id, u] : round) {
      require(static_cast<std::size_t>(u.size()) == dim, "history: bad update length");
      require(id >= 0 && id < num_clients, "history: client id out of range");
    }
}

HistoryStore HistoryStore::from_training(const TrainingHistory& h, int num_clients) {
  HistoryStore s;
  s.dim = static_cast<std::size_t>(h.initial_model.size());
  s.num_clients = num_clients;
  for (const auto& r : h.records) {
    s.globals.push_back(r.global_before);
    s.updates.push_back(r.updates);
  }
  s.final_model = h.final_model;
  return s;
}

void RecoveryConfig::validate(int total_rounds) const {
  require(warmup >= 1, "T_w must be >= 1");
  require(correction >= 1, "T_c must be >= 1");
  require(finetune >= 0, "T_f must be >= 0");
  require(warmup + finetune <= total_rounds, "T_w + T_f must not exceed the number of rounds");
  require(tau >= 0.0, "tau must be >= 0");
  require(!believed_benign.empty(), "believed_benign is empty");
}

bool is_exact_round(int t, int total_rounds, const RecoveryConfig& cfg) {
  if (t < cfg.warmup) return true;
  if (t >= total_rounds - cfg.finetune) return true;
  return (t - cfg.warmup) % cfg.correction == 0;
}

int exact_updates_lower_bound(int total_rounds, int warmup, int correction, int finetune) {
  require(correction >= 1, "T_c must be >= 1");
  const int middle = std::max(0, total_rounds - warmup - finetune);
  return warmup + (middle + correction - 1) / correction + finetune;
}

ParamVector estimate_update(const ParamVector& stored, const LbfgsBuffers& buffers,
                            const ParamVector& recovered_global, const ParamVector& original_global) {
  require(stored.size() == recovered_global.size() && stored.size() == original_global.size(),
          "estimate_update: length mismatch");
  return stored + lbfgs_hvp(buffers, recovered_global - original_global);
}

bool abnormality_check(const ParamVector& estimate, double tau) {
  if (std::isinf(tau)) return false;
  return estimate.cwiseAbs().maxCoeff() > tau;
}

std::pair<ParamVector, RecoveryState> recover(const HistoryStore& history, const RecoveryConfig& config,
                                              const Federation& fed, Adversary* adversary,
                                              const ParamVector& initial, const EvalHook& eval) {
  history.validate();
  const int T = history.rounds();
  config.validate(T);
  require(fed.fl.selection == Selection::kCrossSilo, "recovery requires the cross-silo setting");
  require(static_cast<std::size_t>(initial.size()) == history.dim, "initial model length mismatch");

  Federation replay = fed;
  replay.active = config.believed_benign;
  const std::vector<ClientId> clients = eligible_clients(replay);
  require(!clients.empty(), "no believed-benign client can take part");
  if (adversary) adversary->reset();

  RecoveryState st;
  for (ClientId id : clients) st.buffers.emplace(id, LbfgsBuffers(static_cast<std::size_t>(config.s_max)));
  ParamVector model = initial;

  auto exact_step = [&](const std::vector<ClientId>& ids, int t) {
    const UpdateMap honest = honest_updates(model, replay, ids, t);
    return apply_adversary(adversary, model, replay.agr, honest, t);
  };

  for (int t = 0; t < T; ++t) {
    const auto& stored = history.updates[static_cast<std::size_t>(t)];
    const auto& original = history.globals[static_cast<std::size_t>(t)];
    RecoveryRoundReport rep{t, 0, 0, std::nan(""), std::nan("")};
    UpdateMap updates;
    std::vector<ClientId> exact_ids;
    const bool exact = is_exact_round(t, T, config);

    if (exact) {
      updates = exact_step(clients, t);
      exact_ids = clients;
      rep.exact_count = static_cast<int>(clients.size());
      ++st.exact_rounds;
    } else {
      std::vector<ClientId> need_exact;
      for (ClientId id : clients) {
        const auto it = stored.find(id);
        require(it != stored.end(), "history has no update for client " + std::to_string(id) +
                                        " in round " + std::to_string(t));
        ParamVector est = estimate_update(it->second, st.buffers.at(id), model, original);
        if (abnormality_check(est, config.tau)) {
          need_exact.push_back(id);
          ++st.abnormal_client_updates;
        } else {
          updates.emplace(id, std::move(est));
        }
      }
      if (!need_exact.empty() || config.log_estimation_error) {
        // The adversary must see the whole round to craft; then keep only the
        // clients that were actually asked.
        const UpdateMap full = exact_step(clients, t);
        if (config.log_estimation_error) {
          const ParamVector exact_model = model + replay.fl.server_lr * aggregate_sorted(replay.agr, full);
          UpdateMap est_all = updates;
          for (ClientId id : need_exact) est_all[id] = full.at(id);
          const ParamVector est_model = model + replay.fl.server_lr * aggregate_sorted(replay.agr, est_all);
          rep.estimation_error = (exact_model - est_model).norm();
          st.estimation_error_log[t] = rep.estimation_error;
        }
        for (ClientId id : need_exact) updates[id] = full.at(id);
      }
      exact_ids = need_exact;
      rep.exact_count = static_cast<int>(need_exact.size());
      rep.estimated_count = static_cast<int>(clients.size() - need_exact.size());
    }

    // curvature pairs only from clients that supplied an exact update
    for (ClientId id : exact_ids) {
      const auto it = stored.find(id);
      if (it != stored.end()) st.buffers.at(id).push(model - original, updates.at(id) - it->second);
    }
    st.exact_client_updates += rep.exact_count;
    st.estimated_client_updates += rep.estimated_count;

    const ParamVector agg = aggregate_sorted(replay.agr, updates);
    require(agg.allFinite(), "numerical blow-up during recovery in round " + std::to_string(t));
    if (adversary) adversary->observe(model, updates, agg);
    model = model + replay.fl.server_lr * agg;
    if (eval) rep.accuracy = eval(model);
    st.report.push_back(rep);
  }
  st.recovered_global = model;
  return {model, std::move(st)};
}

void write_recovery_csv(std::ostream& out, const std::vector<RecoveryRoundReport>& rows) {
  out << "round,exact_count,estimated_count,estimation_error,accuracy\n";
  char buf[256];
  for (const auto& r : rows) {
    auto fmt = [](double v) {
      char b[64];
      if (std::isnan(v)) return std::string();
      std::snprintf(b, sizeof b, "%.17g", v);
      return std::string(b);
    };
    std::snprintf(buf, sizeof buf, "%d,%d,%d,%s,%s\n", r.round, r.exact_count, r.estimated_count,
                  fmt(r.estimation_error).c_str(), fmt(r.accuracy).c_str());
    out << buf;
  }
}

std::vector<SweepRow> recovery_sweep(const HistoryStore& history, const RecoveryConfig& base,
                                     const std::vector<SweepPoint>& grid, const Federation& fed,
                                     Adversary* adversary, const ParamVector& initial,
                                     const EvalHook& eval) {
  require(static_cast<bool>(eval), "recovery sweep needs an evaluation hook");
  const int T = history.rounds();
  std::vector<SweepRow> rows;
  for (const auto& p : grid) {
    RecoveryConfig cfg = base;
    cfg.warmup = p.warmup;
    cfg.correction = p.correction;
    cfg.tau = p.tau;
    const auto [model, st] = recover(history, cfg, fed, adversary, initial);
    const double total = static_cast<double>(st.exact_client_updates + st.estimated_client_updates);
    SweepRow row;
    row.point = p;
    row.exact_fraction = total > 0 ? st.exact_client_updates / total : 0.0;
    row.lower_bound_fraction =
        static_cast<double>(exact_updates_lower_bound(T, cfg.warmup, cfg.correction, cfg.finetune)) / T;
    row.recovered_accuracy = eval(model);
    row.retrain_rounds = static_cast<int>(std::lround(row.exact_fraction * T));
    Federation retrain = fed;
    retrain.active = cfg.believed_benign;
    if (adversary) adversary->reset();
    const auto h = run_training(retrain, adversary, initial, {}, row.retrain_rounds);
    row.retrain_accuracy = eval(h.final_model);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace flsim
