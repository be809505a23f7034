#include "stabent/runner.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

using namespace stabent;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json base_config() {
  return nlohmann::json::parse(R"({
    "config_version": 1,
    "name": "cli-test",
    "system": {"type": "linear", "a": [[1.0]], "b": [[1.0]]},
    "gamma": {"lo": [-1.0], "hi": [1.0], "grid": [41]},
    "target": {"lo": [0.0], "hi": [0.0]},
    "zeta": {"type": "exponential", "alpha": 0.5, "big_m": 2.0},
    "epsilon": 0.05,
    "horizons": [0.5, 1.0, 1.5],
    "dt": 0.01,
    "rho": 10.0,
    "mode": "practical",
    "seed": 1,
    "grid_res": 21,
    "feedback": {"type": "linear", "k": [[-4.0]]},
    "candidates": {"quant_levels": 3}
  })");
}

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("stabent_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("config validation names the offending field") {
  auto j = base_config();
  j["dt"] = 0.0;
  try {
    config::parse_config(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field == "dt");
  }

  j = base_config();
  j["horizons"] = {2.0, 1.0};
  CHECK_THROWS_AS(config::parse_config(j), ConfigError);

  j = base_config();
  j["config_version"] = 7;
  CHECK_THROWS_AS(config::parse_config(j), ConfigError);

  j = base_config();
  j["system"].erase("b");
  try {
    config::parse_config(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field == "system.b");
  }

  j = base_config();
  j["epsilon"] = -1.0;
  CHECK_THROWS_AS(config::parse_config(j), ConfigError);
}

TEST_CASE("demo registry") {
  auto names = demos::list_demos();
  CHECK(names.size() >= 5);
  for (const auto& name : names) {
    auto cfg = demos::demo_config(name);  // validates on construction
    CHECK(cfg.name == name);
    CHECK(cfg.dt > 0.0);
    CHECK(cfg.epsilon > 0.0);
    CHECK(!cfg.horizons.empty());
  }
  CHECK_THROWS_AS(demos::demo_config("not-a-demo"), ConfigError);
}

TEST_CASE("every demo runs bounds without error") {
  for (const auto& name : demos::list_demos()) {
    auto cfg = demos::demo_config(name);
    auto dir = fresh_dir("bounds_" + std::to_string(std::hash<std::string>{}(name) % 10000));
    std::ostringstream log;
    int rc = runner::run("bounds", cfg, dir.string(), 4, log);
    INFO(name << ": " << log.str());
    CHECK(rc == 0);
    CHECK(fs::exists(dir / "bounds.json"));
    auto j = nlohmann::json::parse(slurp(dir / "bounds.json"));
    CHECK(j.contains("lower_general"));
    CHECK(j.contains("upper_lipschitz"));
    CHECK(j["metadata"].contains("epsilon"));
  }
}

TEST_CASE("entropy artifacts, reruns and worker counts are byte-identical") {
  auto cfg = config::parse_config(base_config());
  auto dir1 = fresh_dir("ent1");
  auto dir2 = fresh_dir("ent2");
  auto dir8 = fresh_dir("ent8");
  std::ostringstream log;
  REQUIRE(runner::run("entropy", cfg, dir1.string(), 1, log) == 0);
  REQUIRE(runner::run("entropy", cfg, dir2.string(), 1, log) == 0);
  REQUIRE(runner::run("entropy", cfg, dir8.string(), 8, log) == 0);

  auto csv1 = slurp(dir1 / "entropy.csv");
  CHECK(csv1 == slurp(dir2 / "entropy.csv"));
  CHECK(csv1 == slurp(dir8 / "entropy.csv"));
  CHECK(slurp(dir1 / "entropy.json") == slurp(dir8 / "entropy.json"));
  CHECK(csv1.rfind("tau,count,method,rate_running\n", 0) == 0);

  auto j = nlohmann::json::parse(slurp(dir1 / "entropy.json"));
  CHECK(j.contains("spectral_exact"));  // linear system: the exact value rides along
  CHECK(j["estimate"]["counts"].size() == 3);
}

TEST_CASE("simulate writes a trajectory dump") {
  auto cfg = config::parse_config(base_config());
  auto dir = fresh_dir("sim");
  std::ostringstream log;
  REQUIRE(runner::run("simulate", cfg, dir.string(), 1, log) == 0);
  auto csv = slurp(dir / "trajectory.csv");
  CHECK(csv.rfind("t,x1,u1\n", 0) == 0);
  CHECK(fs::exists(dir / "summary.json"));
}

TEST_CASE("verify and check42 run on the linear config") {
  auto cfg = config::parse_config(base_config());
  cfg.sim_tau = 5.0;
  auto dir = fresh_dir("verify");
  std::ostringstream log;
  REQUIRE(runner::run("verify", cfg, dir.string(), 4, log) == 0);
  auto j = nlohmann::json::parse(slurp(dir / "verify.json"));
  CHECK(j["pass"].get<bool>());
  CHECK(fs::exists(dir / "margins.csv"));

  // check42 on a contracting loop: both rates are zero and the grid resolves
  // the eps-ball comfortably
  auto cfg42 = cfg;
  cfg42.system.a = Mat::Constant(1, 1, -1.0);
  cfg42.feedback.k = Mat::Constant(1, 1, 0.0);
  cfg42.epsilon = 0.3;
  cfg42.gamma_box = Box::interval(-0.4, 0.4);
  cfg42.gamma_grid = {17};
  auto dir42 = fresh_dir("check42");
  REQUIRE(runner::run("check42", cfg42, dir42.string(), 4, log) == 0);
  auto j42 = nlohmann::json::parse(slurp(dir42 / "check42.json"));
  CHECK(j42["pass"].get<bool>());
  CHECK(j42.contains("spanning_rate"));
  CHECK(j42.contains("feedback_rate"));
}

TEST_CASE("sweep emits the equilibrium data") {
  auto cfg = demos::demo_config("quadratic-5.2");
  auto dir = fresh_dir("sweep");
  std::ostringstream log;
  REQUIRE(runner::run("sweep", cfg, dir.string(), 1, log) == 0);
  auto csv = slurp(dir / "sweep.csv");
  CHECK(csv.rfind("q,e,jacobian\n", 0) == 0);
  auto j = nlohmann::json::parse(slurp(dir / "sweep.json"));
  CHECK_THAT(j["slope_log_e_vs_log_q"].get<double>(),
             Catch::Matchers::WithinAbs(-2.0 / 3.0, 0.05));
}

TEST_CASE("plotdata emits two columns") {
  auto cfg = config::parse_config(base_config());
  auto dir = fresh_dir("plot");
  std::ostringstream log;
  REQUIRE(runner::run("plotdata", cfg, dir.string(), 4, log) == 0);
  auto csv = slurp(dir / "plot.csv");
  CHECK(csv.rfind("tau,log_count\n", 0) == 0);
}

TEST_CASE("unknown subcommand is rejected") {
  auto cfg = config::parse_config(base_config());
  CHECK_THROWS_AS(runner::run("frobnicate", cfg, fresh_dir("x").string(), 1), ConfigError);
}
