#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string output;
};

Result run(const std::string& args) {
  const auto log = fs::temp_directory_path() / "flsim_cli_out.txt";
  const std::string cmd = std::string(FLSIM_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

fs::path write_config(const std::string& name, const std::string& body) {
  const auto p = fs::temp_directory_path() / name;
  std::ofstream(p) << body;
  return p;
}

const char* kConfig = R"({
  "dataset": {"kind": "synthetic", "num_classes": 3, "per_class": 40, "input_dim": 4, "sep": 5},
  "partition": {"kind": "iid", "num_clients": 6},
  "fl": {"algorithm": "fedsgd", "rounds": 8, "local_lr": 0.5, "full_batch": true},
  "attack": {"kind": "stat_opt", "malicious_fraction": 0.2, "gamma": 0.2},
  "recovery": {"enabled": false, "warmup": 2, "correction": 2, "finetune": 2},
  "save_history": true
})";

}  // namespace

TEST_CASE("missing config exits with code 2 and names the path") {
  const auto r = run("run /nonexistent/flsim.json");
  CHECK(r.code == 2);
  CHECK(r.output.find("/nonexistent/flsim.json") != std::string::npos);
}

TEST_CASE("bad flags and unknown config keys exit with code 2") {
  CHECK(run("run").code == 2);
  CHECK(run("frobnicate").code == 2);
  const auto p = write_config("flsim_cli_bad.json", R"({"fl": {"epochs": 3}})");
  const auto r = run("run " + p.string());
  CHECK(r.code == 2);
  CHECK(r.output.find("epochs") != std::string::npos);
}

TEST_CASE("run, history stats, recover and stats") {
  const auto out = fs::temp_directory_path() / "flsim_cli_run";
  fs::remove_all(out);
  const auto cfg = write_config("flsim_cli_ok.json", kConfig);
  auto r = run("run " + cfg.string() + " --out " + out.string() + " --seed 4 --threads 2");
  CHECK(r.code == 0);
  CHECK(fs::exists(out / "summary.json"));
  CHECK(fs::exists(out / "rounds.csv"));

  r = run("history stats " + (out / "history.bin").string());
  CHECK(r.code == 0);
  CHECK(r.output.find("rounds=8") != std::string::npos);
  CHECK(r.output.find("updates=48") != std::string::npos);

  r = run("recover " + cfg.string() + " --history " + (out / "history.bin").string() + " --out " + (out / "rec").string() + " --seed 4");
  CHECK(r.code == 0);
  CHECK(fs::exists(out / "rec" / "recovery.csv"));
  CHECK(run("recover " + cfg.string() + " --history /nonexistent.bin").code == 2);

  r = run("stats " + cfg.string() + " --out " + out.string());
  CHECK(r.code == 0);
  CHECK(fs::exists(out / "client_stats.csv"));

  const auto grid = write_config("flsim_cli_grid.json", R"({"attack.malicious_fraction": [0.2, 0.1, 0.05, 0.0]})");
  r = run("sweep " + cfg.string() + " --grid " + grid.string() + " --out " + (out / "sweep").string());
  CHECK(r.code == 0);
  CHECK(r.output.find("wrote 4 rows") != std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("detect requires the cross-silo setting") {
  const auto p = write_config("flsim_cli_xdev.json", R"({
    "partition": {"kind": "iid", "num_clients": 6},
    "fl": {"selection": "cross_device", "selected_per_round": 3, "rounds": 3}
  })");
  CHECK(run("detect " + p.string()).code == 2);
}
