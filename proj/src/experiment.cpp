#include "flsim/experiment.hpp"

#include <chrono>
#include <cstdlib>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "flsim/rng.hpp"

namespace flsim {

int default_threads() {
  const char* env = std::getenv("FLSIM_THREADS");
  if (env == nullptr) return 1;
  const int n = std::atoi(env);
  return n > 0 ? n : 1;
}

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in config section '" + section + "'");
  }
}

template <typename T>
T get(const json& j, const char* key, const T& fallback, const std::string& section) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + section + "." + key + "' has the wrong type");
  }
}

template <typename Fn>
auto wrap(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json opt_double(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  check_keys(j, "<root>", {"dataset", "partition", "model", "fl", "agr", "attack", "detector",
                           "recovery", "seed", "seeds", "output_dir", "save_history"});

  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    check_keys(d, "dataset", {"kind", "num_classes", "per_class", "input_dim", "sep", "path",
                              "client_id_column", "keep"});
    auto& ds = c.dataset;
    ds.kind = get<std::string>(d, "kind", ds.kind, "dataset");
    ds.num_classes = get<int>(d, "num_classes", ds.num_classes, "dataset");
    ds.per_class = get<int>(d, "per_class", ds.per_class, "dataset");
    ds.input_dim = get<int>(d, "input_dim", ds.input_dim, "dataset");
    ds.sep = get<double>(d, "sep", ds.sep, "dataset");
    ds.path = get<std::string>(d, "path", ds.path, "dataset");
    ds.client_id_column = get<int>(d, "client_id_column", ds.client_id_column, "dataset");
    ds.keep = get<std::vector<double>>(d, "keep", ds.keep, "dataset");
    if (ds.kind != "synthetic" && ds.kind != "csv")
      throw ConfigError("dataset.kind must be 'synthetic' or 'csv'");
    if (ds.kind == "csv" && ds.path.empty()) throw ConfigError("dataset.path is required for csv");
    if (ds.kind == "synthetic" && (ds.num_classes < 2 || ds.per_class < 1 || ds.input_dim < 1))
      throw ConfigError("synthetic dataset needs num_classes >= 2, per_class >= 1, input_dim >= 1");
  }

  if (j.contains("partition")) {
    const json& p = j["partition"];
    check_keys(p, "partition", {"kind", "num_clients", "alpha", "bias", "split"});
    auto& ps = c.partition;
    ps.kind = wrap("partition.kind", [&] {
      return parse_partition_kind(get<std::string>(p, "kind", to_string(ps.kind), "partition"));
    });
    ps.num_clients = get<int>(p, "num_clients", ps.num_clients, "partition");
    ps.alpha = get<double>(p, "alpha", ps.alpha, "partition");
    ps.bias = get<double>(p, "bias", ps.bias, "partition");
    if (p.contains("split")) {
      const auto v = get<std::vector<int>>(p, "split", {}, "partition");
      if (v.size() != 3) throw ConfigError("partition.split needs three integers");
      ps.split = {v[0], v[1], v[2]};
    }
    wrap("partition", [&] { ps.validate(); return 0; });
  }

  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, "model", {"hidden_dim", "activation"});
    c.model_shape.hidden_dim = get<int>(m, "hidden_dim", 0, "model");
    c.model_shape.activation = wrap("model.activation", [&] {
      return parse_activation(get<std::string>(m, "activation", "relu", "model"));
    });
    if (c.model_shape.hidden_dim < 0) throw ConfigError("model.hidden_dim must be >= 0");
  }

  c.fl.total_clients = c.partition.num_clients;
  c.fl.selected_per_round = c.partition.num_clients;
  if (j.contains("fl")) {
    const json& f = j["fl"];
    check_keys(f, "fl", {"algorithm", "selection", "selected_per_round", "rounds", "server_lr",
                         "local_lr", "local_epochs", "batch_size", "full_batch"});
    auto& fl = c.fl;
    fl.algorithm = wrap("fl.algorithm", [&] {
      return parse_algorithm(get<std::string>(f, "algorithm", to_string(fl.algorithm), "fl"));
    });
    fl.selection = wrap("fl.selection", [&] {
      return parse_selection(get<std::string>(f, "selection", to_string(fl.selection), "fl"));
    });
    fl.selected_per_round = get<int>(f, "selected_per_round", fl.selected_per_round, "fl");
    fl.rounds = get<int>(f, "rounds", fl.rounds, "fl");
    fl.server_lr = get<double>(f, "server_lr", fl.server_lr, "fl");
    fl.local_lr = get<double>(f, "local_lr", fl.local_lr, "fl");
    fl.local_epochs = get<int>(f, "local_epochs", fl.local_epochs, "fl");
    fl.batch_size = get<int>(f, "batch_size", fl.batch_size, "fl");
    fl.full_batch = get<bool>(f, "full_batch", fl.full_batch, "fl");
  }
  if (c.fl.selection == Selection::kCrossSilo) c.fl.selected_per_round = c.fl.total_clients;
  wrap("fl", [&] { c.fl.validate(); return 0; });

  if (j.contains("agr")) {
    const json& a = j["agr"];
    check_keys(a, "agr", {"kind", "m", "multi_k", "threshold"});
    c.agr.kind = wrap("agr.kind", [&] {
      return parse_aggregator_kind(get<std::string>(a, "kind", "mean", "agr"));
    });
    c.agr.m = get<int>(a, "m", c.agr.m, "agr");
    c.agr.multi_k = get<int>(a, "multi_k", c.agr.multi_k, "agr");
    c.agr.threshold = get<double>(a, "threshold", c.agr.threshold, "agr");
    wrap("agr", [&] { c.agr.validate(static_cast<std::size_t>(c.fl.selected_per_round)); return 0; });
  }

  if (j.contains("attack")) {
    const json& a = j["attack"];
    check_keys(a, "attack", {"kind", "malicious_fraction", "knowledge", "gamma", "deviation",
                             "gamma_init", "gamma_tol", "literal_stat_opt_sign"});
    auto& at = c.attack;
    at.kind = wrap("attack.kind", [&] { return parse_attack_kind(get<std::string>(a, "kind", "none", "attack")); });
    at.malicious_fraction = get<double>(a, "malicious_fraction", at.malicious_fraction, "attack");
    at.knowledge = wrap("attack.knowledge", [&] {
      return parse_knowledge(get<std::string>(a, "knowledge", to_string(at.knowledge), "attack"));
    });
    at.gamma = get<double>(a, "gamma", at.gamma, "attack");
    at.deviation = wrap("attack.deviation", [&] {
      return parse_deviation_kind(get<std::string>(a, "deviation", to_string(at.deviation), "attack"));
    });
    at.gamma_init = get<double>(a, "gamma_init", at.gamma_init, "attack");
    at.gamma_tol = get<double>(a, "gamma_tol", at.gamma_tol, "attack");
    at.literal_stat_opt_sign = get<bool>(a, "literal_stat_opt_sign", at.literal_stat_opt_sign, "attack");
    wrap("attack", [&] { at.validate(); return 0; });
  }

  if (j.contains("detector")) {
    const json& d = j["detector"];
    check_keys(d, "detector", {"enabled", "window", "s_max", "k_max", "gap_refs", "start_round", "normalize"});
    c.detector_enabled = get<bool>(d, "enabled", true, "detector");
    auto& dc = c.detector;
    dc.window = get<int>(d, "window", dc.window, "detector");
    dc.s_max = get<int>(d, "s_max", dc.s_max, "detector");
    dc.k_max = get<int>(d, "k_max", dc.k_max, "detector");
    dc.gap_refs = get<int>(d, "gap_refs", dc.gap_refs, "detector");
    dc.start_round = get<int>(d, "start_round", dc.start_round, "detector");
    dc.normalize = get<bool>(d, "normalize", dc.normalize, "detector");
    wrap("detector", [&] { dc.validate(); return 0; });
    if (c.detector_enabled && c.fl.selection != Selection::kCrossSilo)
      throw ConfigError("detector requires fl.selection = cross_silo");
  }

  if (j.contains("recovery")) {
    const json& r = j["recovery"];
    check_keys(r, "recovery", {"enabled", "warmup", "correction", "finetune", "tau", "s_max",
                               "believed_benign", "inject_rate", "log_estimation_error"});
    auto& rs = c.recovery;
    rs.enabled = get<bool>(r, "enabled", true, "recovery");
    rs.config.warmup = get<int>(r, "warmup", rs.config.warmup, "recovery");
    rs.config.correction = get<int>(r, "correction", rs.config.correction, "recovery");
    rs.config.finetune = get<int>(r, "finetune", rs.config.finetune, "recovery");
    if (r.contains("tau") && !r["tau"].is_null()) rs.config.tau = get<double>(r, "tau", 0.0, "recovery");
    rs.config.s_max = get<int>(r, "s_max", rs.config.s_max, "recovery");
    const auto src = get<std::string>(r, "believed_benign", "truth", "recovery");
    if (src == "truth") rs.source = BenignSource::kTruth;
    else if (src == "detector") rs.source = BenignSource::kDetector;
    else throw ConfigError("recovery.believed_benign must be 'truth' or 'detector'");
    rs.inject_rate = get<double>(r, "inject_rate", rs.inject_rate, "recovery");
    rs.config.log_estimation_error = get<bool>(r, "log_estimation_error", false, "recovery");
    if (rs.inject_rate < 0.0 || rs.inject_rate > 1.0) throw ConfigError("recovery.inject_rate must be in [0, 1]");
    if (rs.config.warmup < 1 || rs.config.correction < 1 || rs.config.finetune < 0 ||
        rs.config.warmup + rs.config.finetune > c.fl.rounds)
      throw ConfigError("recovery needs T_w >= 1, T_c >= 1, T_f >= 0 and T_w + T_f <= rounds");
    if (!(rs.config.tau >= 0.0)) throw ConfigError("recovery.tau must be >= 0");
    if (rs.enabled && c.fl.selection != Selection::kCrossSilo)
      throw ConfigError("recovery requires fl.selection = cross_silo");
    if (rs.enabled && rs.source == BenignSource::kDetector && !c.detector_enabled)
      throw ConfigError("recovery.believed_benign = detector needs the detector section enabled");
  }

  if (j.contains("seed") && j.contains("seeds")) throw ConfigError("give either 'seed' or 'seeds', not both");
  if (j.contains("seed")) c.seeds = {get<std::uint64_t>(j, "seed", 1, "<root>")};
  if (j.contains("seeds")) c.seeds = get<std::vector<std::uint64_t>>(j, "seeds", {}, "<root>");
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
  c.output_dir = get<std::string>(j, "output_dir", c.output_dir, "<root>");
  c.save_history = get<bool>(j, "save_history", c.save_history, "<root>");
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["dataset"] = {{"kind", c.dataset.kind},           {"num_classes", c.dataset.num_classes},
                  {"per_class", c.dataset.per_class}, {"input_dim", c.dataset.input_dim},
                  {"sep", c.dataset.sep},             {"path", c.dataset.path},
                  {"client_id_column", c.dataset.client_id_column}, {"keep", c.dataset.keep}};
  j["partition"] = {{"kind", to_string(c.partition.kind)},
                    {"num_clients", c.partition.num_clients},
                    {"alpha", c.partition.alpha},
                    {"bias", c.partition.bias},
                    {"split", {c.partition.split[0], c.partition.split[1], c.partition.split[2]}}};
  j["model"] = {{"hidden_dim", c.model_shape.hidden_dim},
                {"activation", c.model_shape.activation == Activation::kRelu ? "relu" : "tanh"}};
  j["fl"] = {{"algorithm", to_string(c.fl.algorithm)},     {"selection", to_string(c.fl.selection)},
             {"selected_per_round", c.fl.selected_per_round}, {"rounds", c.fl.rounds},
             {"server_lr", c.fl.server_lr},                {"local_lr", c.fl.local_lr},
             {"local_epochs", c.fl.local_epochs},          {"batch_size", c.fl.batch_size},
             {"full_batch", c.fl.full_batch}};
  j["agr"] = {{"kind", to_string(c.agr.kind)}, {"m", c.agr.m}, {"multi_k", c.agr.multi_k},
              {"threshold", c.agr.threshold}};
  j["attack"] = {{"kind", to_string(c.attack.kind)},
                 {"malicious_fraction", c.attack.malicious_fraction},
                 {"knowledge", to_string(c.attack.knowledge)},
                 {"gamma", c.attack.gamma},
                 {"deviation", to_string(c.attack.deviation)},
                 {"gamma_init", c.attack.gamma_init},
                 {"gamma_tol", c.attack.gamma_tol},
                 {"literal_stat_opt_sign", c.attack.literal_stat_opt_sign}};
  j["detector"] = {{"enabled", c.detector_enabled},       {"window", c.detector.window},
                   {"s_max", c.detector.s_max},           {"k_max", c.detector.k_max},
                   {"gap_refs", c.detector.gap_refs},     {"start_round", c.detector.start_round},
                   {"normalize", c.detector.normalize}};
  j["recovery"] = {{"enabled", c.recovery.enabled},
                   {"warmup", c.recovery.config.warmup},
                   {"correction", c.recovery.config.correction},
                   {"finetune", c.recovery.config.finetune},
                   {"tau", opt_double(c.recovery.config.tau)},
                   {"s_max", c.recovery.config.s_max},
                   {"believed_benign", c.recovery.source == BenignSource::kTruth ? "truth" : "detector"},
                   {"inject_rate", c.recovery.inject_rate},
                   {"log_estimation_error", c.recovery.config.log_estimation_error}};
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  j["save_history"] = c.save_history;
  return j;
}

Setup build_setup(const ExperimentConfig& cfg, std::uint64_t seed, int threads) {
  Setup s;
  s.seed = seed;
  if (cfg.dataset.kind == "csv") {
    s.ds = load_csv(cfg.dataset.path, CsvOptions{cfg.dataset.client_id_column});
  } else {
    s.ds = synth_dataset(cfg.dataset.num_classes, cfg.dataset.per_class, cfg.dataset.input_dim,
                         cfg.dataset.sep, derive_seed(seed, Stream::kData, 1));
  }
  if (!cfg.dataset.keep.empty()) s.ds = imbalance_transform(s.ds, cfg.dataset.keep, seed);

  PartitionSpec ps = cfg.partition;
  ps.seed = derive_seed(seed, Stream::kPartition);
  s.shards = partition(s.ds, ps);

  s.fed.model = cfg.model_shape;
  s.fed.model.input_dim = static_cast<int>(s.ds.features.cols());
  s.fed.model.num_classes = s.ds.num_classes;
  s.fed.fl = cfg.fl;
  s.fed.fl.master_seed = seed;
  s.fed.agr = cfg.agr;
  s.fed.threads = threads;
  for (const auto& sh : s.shards) s.fed.client_train.push_back(to_batch(s.ds, sh.train));

  if (cfg.attack.kind != AttackKind::kNone)
    s.malicious = choose_malicious(cfg.partition.num_clients, cfg.attack.malicious_fraction, seed);
  if (cfg.attack.kind == AttackKind::kLabelFlip)
    for (ClientId id : s.malicious) {
      auto& b = s.fed.client_train[static_cast<std::size_t>(id)];
      b.labels = label_flip(b.labels, s.ds.num_classes);
    }
  s.initial = init_params(s.fed.model, derive_seed(seed, Stream::kInit));
  return s;
}

Adversary make_adversary(const ExperimentConfig& cfg, const Setup& setup) {
  return Adversary(cfg.attack, setup.malicious, static_cast<std::size_t>(std::max(0, cfg.detector.s_max)));
}

std::set<ClientId> inject_misdetection(const std::set<ClientId>& clients,
                                       const std::set<ClientId>& malicious, double rate,
                                       std::uint64_t seed) {
  std::vector<ClientId> mal, ben;
  for (ClientId id : clients) (malicious.count(id) ? mal : ben).push_back(id);
  Rng rng(derive_seed(seed, Stream::kInjection));
  shuffle(mal, rng);
  shuffle(ben, rng);
  const auto escaped = static_cast<std::size_t>(std::lround(rate * static_cast<double>(mal.size())));
  const auto dropped = static_cast<std::size_t>(std::lround(rate * static_cast<double>(ben.size())));
  std::set<ClientId> out(ben.begin() + static_cast<std::ptrdiff_t>(dropped), ben.end());
  out.insert(mal.begin(), mal.begin() + static_cast<std::ptrdiff_t>(escaped));
  return out;
}

namespace {

std::vector<int> union_train_indices(const Shards& shards) {
  std::vector<int> idx;
  for (const auto& s : shards) idx.insert(idx.end(), s.train.begin(), s.train.end());
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<RoundLog> round_logs(const TrainingHistory& h, const Setup& s) {
  const Batch train = to_batch(s.ds, union_train_indices(s.shards));
  const Batch test = to_batch(s.ds, union_test_indices(s.shards));
  std::vector<RoundLog> out;
  for (std::size_t t = 0; t < h.records.size(); ++t) {
    const ParamVector& model = t + 1 < h.records.size() ? h.records[t + 1].global_before : h.final_model;
    const double l = loss(model, train, s.fed.model);
    if (!std::isfinite(l))
      throw Error("numerical blow-up: non-finite training loss after round " + std::to_string(t));
    out.push_back({static_cast<int>(t), l, overall_accuracy(predict(model, test.features, s.fed.model), test.labels)});
  }
  return out;
}

json metrics_json(const MetricsReport& m) {
  json j;
  j["overall_acc"] = m.overall_acc;
  j["mean_per_class_acc"] = m.mean_per_class_acc;
  json pc = json::array();
  for (const auto& v : m.per_class_acc) pc.push_back(v ? json(*v) : json(nullptr));
  j["per_class_acc"] = pc;
  json cl = json::object();
  for (const auto& [id, a] : m.per_client_acc) cl[std::to_string(id)] = a;
  j["per_client_acc"] = cl;
  j["attack_impact"] = m.attack_impact;
  if (m.detection) {
    j["detection"] = {{"flagged", std::vector<int>(m.detection->flagged.begin(), m.detection->flagged.end())},
                      {"restarted", m.detection->restarted},
                      {"detection_round", m.detection->detection_round},
                      {"fpr", m.detection->fpr},
                      {"fnr", m.detection->fnr}};
  }
  return j;
}

void write_outputs(const fs::path& dir, const RunResult& r, const Setup& s) {
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "rounds.csv");
    f << kRoundsHeader << '\n';
    for (const auto& l : r.rounds) f << l.round << ',' << fmt_double(l.train_loss) << ',' << fmt_double(l.overall_acc) << '\n';
  }
  {
    std::ofstream f(dir / "per_client.csv");
    f << kPerClientHeader << '\n';
    const auto pc = per_client_accuracy(r.history.final_model, s.shards, s.ds, s.fed.model);
    for (const auto& [id, a] : pc.accuracy) f << id << ',' << pc.test_size.at(id) << ',' << fmt_double(a) << '\n';
  }
  {
    std::ofstream f(dir / "per_class.csv");
    f << kPerClassHeader << '\n';
    const auto idx = union_test_indices(s.shards);
    const Batch b = to_batch(s.ds, idx);
    const auto pc = per_class_and_mean(predict(r.history.final_model, b.features, s.fed.model), b.labels, s.ds.num_classes);
    for (std::size_t c = 0; c < pc.per_class.size(); ++c)
      f << c << ',' << pc.counts[c] << ',' << (pc.per_class[c] ? fmt_double(*pc.per_class[c]) : "") << '\n';
  }
  if (r.detection) {
    std::ofstream f(dir / "detection_trace.csv");
    write_trace_csv(f, r.detection->trace);
  }
  if (r.recovery) {
    std::ofstream f(dir / "recovery.csv");
    write_recovery_csv(f, r.recovery->report);
  }
  std::ofstream f(dir / "summary.json");
  f << r.summary.dump(2) << '\n';
}

}  // namespace

RunResult run_single(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& out_dir,
                     int threads) {
  const auto t0 = std::chrono::steady_clock::now();
  const Setup s = build_setup(cfg, seed, threads);
  Adversary adv = make_adversary(cfg, s);
  RunResult r;

  if (cfg.detector_enabled) {
    DetectorConfig dc = cfg.detector;
    dc.seed = seed;
    r.detection = detect_and_restart(dc, s.fed, &adv, s.initial);
    r.history = r.detection->history;
  } else {
    r.history = run_training(s.fed, &adv, s.initial);
  }
  r.rounds = round_logs(r.history, s);
  r.metrics = evaluate(r.history.final_model, s.shards, s.ds, s.fed.model);
  if (r.detection) r.metrics.detection = r.detection->outcome;

  r.benign_accuracy = r.metrics.overall_acc;
  if (cfg.attack.kind != AttackKind::kNone) {
    ExperimentConfig benign = cfg;
    benign.attack.kind = AttackKind::kNone;
    const Setup bs = build_setup(benign, seed, threads);
    const auto h = run_training(bs.fed, nullptr, bs.initial);
    r.benign_accuracy = evaluate(h.final_model, bs.shards, bs.ds, bs.fed.model).overall_acc;
  }
  r.metrics.attack_impact = r.benign_accuracy - r.metrics.overall_acc;

  if (cfg.recovery.enabled) {
    Adversary orig_adv = make_adversary(cfg, s);
    const TrainingHistory original =
        cfg.detector_enabled ? run_training(s.fed, &orig_adv, s.initial) : r.history;
    const HistoryStore store = HistoryStore::from_training(original, cfg.partition.num_clients);
    RecoveryConfig rc = cfg.recovery.config;
    const auto eligible = eligible_clients(s.fed);
    const std::set<ClientId> clients(eligible.begin(), eligible.end());
    if (cfg.recovery.source == BenignSource::kDetector) {
      for (ClientId id : clients)
        if (!r.detection->outcome.flagged.count(id)) rc.believed_benign.insert(id);
    } else {
      rc.believed_benign = inject_misdetection(clients, s.malicious, cfg.recovery.inject_rate, seed);
    }
    Adversary rec_adv = make_adversary(cfg, s);
    auto eval = [&](const ParamVector& m) { return evaluate(m, s.shards, s.ds, s.fed.model).overall_acc; };
    auto [model, st] = recover(store, rc, s.fed, &rec_adv, s.initial, eval);
    r.recovered_metrics = evaluate(model, s.shards, s.ds, s.fed.model);
    r.recovery = std::move(st);
  }

  if (cfg.save_history && !out_dir.empty()) {
    fs::create_directories(out_dir);
    save_history(HistoryStore::from_training(r.history, cfg.partition.num_clients),
                 (fs::path(out_dir) / "history.bin").string());
  }

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.summary = {{"config", to_json(cfg)}, {"seed", seed}, {"metrics", metrics_json(r.metrics)},
               {"benign_acc", r.benign_accuracy},
               {"malicious", std::vector<int>(s.malicious.begin(), s.malicious.end())}};
  if (r.recovery) {
    const auto& st = *r.recovery;
    r.summary["recovery"] = {{"exact_rounds", st.exact_rounds},
                             {"exact_client_updates", st.exact_client_updates},
                             {"estimated_client_updates", st.estimated_client_updates},
                             {"abnormal_client_updates", st.abnormal_client_updates},
                             {"recovered_metrics", metrics_json(*r.recovered_metrics)}};
  }
  r.summary["wall_time_s"] = wall;
  if (!out_dir.empty()) write_outputs(out_dir, r, s);
  return r;
}

std::vector<RunResult> run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                      int threads) {
  std::vector<RunResult> out;
  for (auto seed : cfg.seeds) {
    std::string dir = out_dir;
    if (!out_dir.empty() && cfg.seeds.size() > 1) dir = (fs::path(out_dir) / ("seed_" + std::to_string(seed))).string();
    out.push_back(run_single(cfg, seed, dir, threads));
  }
  return out;
}

std::vector<json> expand_grid(const json& base, const json& grid) {
  if (!grid.is_object()) throw ConfigError("grid file must be a JSON object of dotted keys to value lists");
  std::vector<json> points = {base};
  for (const auto& [key, values] : grid.items()) {
    if (!values.is_array() || values.empty()) throw ConfigError("grid entry '" + key + "' must be a non-empty list");
    std::vector<json> next;
    for (const auto& p : points) {
      for (const auto& v : values) {
        json q = p;
        json* node = &q;
        std::stringstream ss(key);
        std::string part;
        std::vector<std::string> parts;
        while (std::getline(ss, part, '.')) parts.push_back(part);
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
          if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
          node = &(*node)[parts[i]];
        }
        (*node)[parts.back()] = v;
        next.push_back(std::move(q));
      }
    }
    points = std::move(next);
  }
  return points;
}

int run_sweep(const json& base, const json& grid, const std::string& out_dir, int threads) {
  const auto points = expand_grid(base, grid);
  std::vector<std::string> keys;
  for (const auto& [key, v] : grid.items()) keys.push_back(key);
  fs::create_directories(out_dir);
  std::ofstream f(fs::path(out_dir) / "sweep.csv");
  f << "point";
  for (const auto& k : keys) f << ',' << k;
  f << ",seed,overall_acc,mean_per_class_acc,attack_impact,fpr,fnr\n";
  int rows = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const ExperimentConfig cfg = parse_config(points[i]);
    const auto dir = (fs::path(out_dir) / ("point_" + std::to_string(i))).string();
    const auto results = run_experiment(cfg, dir, threads);
    for (std::size_t s = 0; s < results.size(); ++s) {
      const auto& m = results[s].metrics;
      f << i;
      for (const auto& k : grid.items()) {
        json v = points[i];
        std::stringstream ss(k.key());
        std::string part;
        while (std::getline(ss, part, '.')) v = v[part];
        f << ',' << v.dump();
      }
      f << ',' << cfg.seeds[s] << ',' << fmt_double(m.overall_acc) << ',' << fmt_double(m.mean_per_class_acc) << ','
        << fmt_double(m.attack_impact) << ',' << (m.detection ? fmt_double(m.detection->fpr) : "") << ','
        << (m.detection ? fmt_double(m.detection->fnr) : "") << '\n';
      ++rows;
    }
  }
  return rows;
}

RunResult run_recover(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& history_path,
                      const std::string& out_dir, int threads) {
  const auto t0 = std::chrono::steady_clock::now();
  const Setup s = build_setup(cfg, seed, threads);
  const HistoryStore store = load_history(history_path);
  require(store.dim == s.fed.model.param_count(), "history dimension does not match the configured model");
  RecoveryConfig rc = cfg.recovery.config;
  const auto eligible = eligible_clients(s.fed);
  const std::set<ClientId> clients(eligible.begin(), eligible.end());
  Adversary adv = make_adversary(cfg, s);
  RunResult r;
  if (cfg.recovery.source == BenignSource::kDetector) {
    DetectorConfig dc = cfg.detector;
    dc.seed = seed;
    r.detection = detect_and_restart(dc, s.fed, &adv, s.initial);
    for (ClientId id : clients)
      if (!r.detection->outcome.flagged.count(id)) rc.believed_benign.insert(id);
  } else {
    rc.believed_benign = inject_misdetection(clients, s.malicious, cfg.recovery.inject_rate, seed);
  }
  auto eval = [&](const ParamVector& m) { return evaluate(m, s.shards, s.ds, s.fed.model).overall_acc; };
  auto [model, st] = recover(store, rc, s.fed, &adv, s.initial, eval);
  r.history.initial_model = s.initial;
  r.history.final_model = model;
  r.metrics = evaluate(model, s.shards, s.ds, s.fed.model);
  r.recovered_metrics = r.metrics;
  r.recovery = std::move(st);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.summary = {{"config", to_json(cfg)},
               {"seed", seed},
               {"history", history_path},
               {"metrics", metrics_json(r.metrics)},
               {"recovery",
                {{"exact_rounds", r.recovery->exact_rounds},
                 {"exact_client_updates", r.recovery->exact_client_updates},
                 {"estimated_client_updates", r.recovery->estimated_client_updates},
                 {"abnormal_client_updates", r.recovery->abnormal_client_updates}}},
               {"wall_time_s", wall}};
  if (!out_dir.empty()) write_outputs(out_dir, r, s);
  return r;
}

std::string stable_summary(const json& summary) {
  json j = summary;
  j.erase("wall_time_s");
  return j.dump(2);
}

}  // namespace flsim
