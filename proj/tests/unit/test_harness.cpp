#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ofm/harness/cli.hpp"

using namespace ofm;
using namespace ofm::harness;
using Catch::Matchers::WithinAbs;

namespace {

errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const ofm::error& e) {
    return e.code();
  }
  return errc::convergence_failure;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ofm_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.market.n_buyers = 4;
  c.market.n_items = 6;
  c.noise = NoiseModel::stationary(0.02);
  c.horizon = 60;
  c.trials = 3;
  c.base_seed = 7;
  return c;
}

int cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "ofm_cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str() + err.str();
  return code;
}

}  // namespace

TEST_CASE("single period at the symmetric fixed point has zero regret", "[harness]") {
  ExperimentConfig c;
  c.market.values = {{0.5, 0.5}, {0.5, 0.5}};
  c.market.n_buyers = 2;
  c.market.n_items = 2;
  c.noise = NoiseModel::stationary(0.0);
  c.horizon = 1;
  c.trials = 1;
  const auto s = run_experiment(c);
  CHECK_THAT(s.fairness_mean, WithinAbs(0.0, 1e-15));
  CHECK_THAT(s.trials[0].individual_final, WithinAbs(0.0, 1e-15));
  CHECK(s.passed());
}

TEST_CASE("reruns write byte-identical results", "[harness]") {
  auto c = small_config();
  const auto a = scratch("repro_a"), b = scratch("repro_b");
  c.output_dir = a.string();
  run_experiment(c);
  c.output_dir = b.string();
  run_experiment(c);
  const std::string csv = slurp(a / "results.csv");
  CHECK(csv == slurp(b / "results.csv"));
  CHECK(slurp(a / "summary.json") != "");
  // header plus one row per (trial, period)
  CHECK(csv.substr(0, csv.find('\n')) == kResultColumns);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + c.trials * c.horizon);
}

TEST_CASE("record_every thins rows but keeps the last period", "[harness]") {
  auto c = small_config();
  c.record_every = 25;
  const auto dir = scratch("thin");
  c.output_dir = dir.string();
  run_experiment(c);
  const std::string csv = slurp(dir / "results.csv");
  // periods 25, 50 and 60 per trial
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + c.trials * 3);
  CHECK(csv.find("\n0,60,") != std::string::npos);
}

TEST_CASE("config parsing is strict", "[harness][config]") {
  using json = nlohmann::json;
  CHECK(code_of([] { config_from_json(json{{"horizn", 10}}); }) == errc::config_error);
  CHECK(code_of([] { config_from_json(json{{"market", {{"n_buyer", 2}}}}); }) == errc::config_error);
  CHECK(code_of([] { config_from_json(json{{"noise", {{"sigma", 0.1}, {"beta", 1}}}}); }) ==
        errc::config_error);
  CHECK(code_of([] { config_from_json(json{{"noise", {{"kind", "brownian"}}}}); }) ==
        errc::config_error);
  CHECK(code_of([] { config_from_json(json{{"step_rule", "inverse_cube"}}); }) == errc::config_error);
  CHECK(code_of([] { config_from_json(json{{"horizon", 0}}); }) == errc::config_error);
  CHECK(code_of([] { config_from_json(json{{"horizon", "long"}}); }) == errc::config_error);
  CHECK(code_of([] {
          config_from_json(json{{"horizon", 100},
                                {"noise", {{"kind", "periodic"}, {"partitions", 3}, {"partition_len", 10}}}});
        }) == errc::config_error);
  CHECK(code_of([] { load_config("/nonexistent/ofm.json"); }) == errc::io_error);

  const auto c = config_from_json(json{{"market", {{"n_buyers", 3}, {"n_items", 4}, {"budgets", "equal"}}},
                                       {"noise", {{"kind", "Ergodic"}, {"alpha", 0.6}, {"sigma", 0.01}}},
                                       {"step_rule", "inverse_sqrt_t"},
                                       {"horizon", 10}});
  CHECK(c.market.n_buyers == 3);
  CHECK(c.noise.kind == NoiseKind::ergodic);
  CHECK(c.noise.alpha == 0.6);
  CHECK(c.step_rule == StepRule::inverse_sqrt_t);
}

TEST_CASE("sweep guards and reduction", "[harness][sweep]") {
  auto c = small_config();
  c.instances = std::vector<InstanceSpec>{};
  CHECK(code_of([&] { run_instance_sweep(c); }) == errc::config_error);

  const auto sweep_dir = scratch("sweep"), single_dir = scratch("single");
  c.instances = std::vector<InstanceSpec>{{4, 6, 0.02}};
  c.output_dir = sweep_dir.string();
  const auto sweep = run_instance_sweep(c);
  REQUIRE(sweep.results.size() == 1);
  auto single = small_config();
  single.output_dir = single_dir.string();
  const auto direct = run_experiment(single);
  CHECK(slurp(sweep_dir / "instance_0" / "results.csv") == slurp(single_dir / "results.csv"));
  CHECK(sweep.results[0].fairness_mean == direct.fairness_mean);
  CHECK(std::filesystem::exists(sweep_dir / "sweep_summary.json"));
}

TEST_CASE("step-size comparison reuses the experiment code path", "[harness][stepsize]") {
  auto c = small_config();
  const auto dir = scratch("stepsize"), ref = scratch("stepsize_ref");
  c.output_dir = dir.string();
  const auto s = run_stepsize_comparison(c);
  c.output_dir = ref.string();
  run_experiment(c);

  const std::string csv = slurp(dir / "results.csv");
  const std::string expected = slurp(ref / "results.csv");
  std::string constant_rows;
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "step_rule," + std::string(kResultColumns));
  while (std::getline(lines, line)) {
    if (line.rfind("constant_one,", 0) == 0) constant_rows += line.substr(13) + "\n";
  }
  CHECK(constant_rows == expected.substr(expected.find('\n') + 1));
  CHECK(s.of(StepRule::constant_one).fairness_mean ==
        run_experiment(small_config()).fairness_mean);
}

TEST_CASE("step-size comparison at the symmetric fixed point gives zero regret", "[harness][stepsize]") {
  ExperimentConfig c;
  c.market.values = {{0.5, 0.5}, {0.5, 0.5}};
  c.market.n_buyers = 2;
  c.market.n_items = 2;
  c.noise = NoiseModel::stationary(0.0);
  c.horizon = 50;
  c.trials = 1;
  const auto s = run_stepsize_comparison(c);
  for (const auto& r : s.results) CHECK_THAT(r.fairness_mean, WithinAbs(0.0, 1e-14));
}

TEST_CASE("summary bound fields", "[harness]") {
  auto c = small_config();
  const auto dir = scratch("summary");
  c.output_dir = dir.string();
  run_experiment(c);
  const auto j = nlohmann::json::parse(slurp(dir / "summary.json"));
  CHECK_THAT(j["log_mn"].get<double>(), WithinAbs(std::log(24.0), 1e-12));
  CHECK_THAT(j["two_log_mn_over_t"].get<double>(), WithinAbs(2.0 * std::log(24.0) / 60.0, 1e-12));
  CHECK(j["pass"]["all"].get<bool>());
}

TEST_CASE("fairness bounds per input model", "[harness]") {
  const double log_mn = std::log(600.0);
  CHECK(fairness_bound(NoiseModel::stationary(0.01), 5000, log_mn, 1.0) == log_mn);
  CHECK_THAT(fairness_bound(NoiseModel::corrupted(0.01, 0.01), 5000, log_mn, 1.0),
             WithinAbs(100.0 + log_mn, 1e-12));
  const auto [kappa, delta] = ergodic_mixing(0.6, 5000);
  CHECK(kappa == 17);  // ceil(log 5000 / log (1 / 0.6)) = ceil(16.67)
  CHECK_THAT(delta, WithinAbs(std::pow(0.6, 17), 1e-18));
  CHECK(ergodic_mixing(0.0, 5000).first == 0);
}

TEST_CASE("invariant suites pass and the negative control fails", "[harness][invariants]") {
  const auto report = check_invariants(1);
  CHECK(report.passed());
  for (const auto& s : report.suites) CHECK(s.instances > 0);

  const auto bad = check_invariants(1, true);
  CHECK_FALSE(bad.passed());
  for (const auto& s : bad.suites) CHECK(s.passed() == (s.name != "budget_and_clearance"));
}

TEST_CASE("invariant verdicts are stable across seeds", "[harness][invariants]") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK(check_invariants(1, false, seed).passed());
}

TEST_CASE("cli exit codes", "[harness][cli]") {
  const auto dir = scratch("cli");
  std::filesystem::create_directories(dir);
  const auto cfg = dir / "config.json";
  {
    std::ofstream f(cfg);
    f << R"({"market": {"n_buyers": 3, "n_items": 4}, "horizon": 20, "trials": 2})";
  }
  const auto bad = dir / "bad.json";
  {
    std::ofstream f(bad);
    f << R"({"horizon": 20, "trails": 2})";
  }
  const auto two = dir / "two.json";
  {
    std::ofstream f(two);
    f << R"({"market": {"budgets": [0.5, 0.5], "values": [[0.75, 0.25], [0.25, 0.75]]},
             "noise": {"sigma": 0.0}, "horizon": 1, "trials": 1})";
  }
  std::string text;
  CHECK(cli({"simulate", "--config", cfg.string(), "--out", (dir / "sim").string()}) == kExitOk);
  CHECK(std::filesystem::exists(dir / "sim" / "results.csv"));
  CHECK(cli({"simulate", "--config", bad.string(), "--out", (dir / "x").string()}, &text) == kExitConfig);
  CHECK(text.find("trails") != std::string::npos);
  CHECK(cli({"simulate", "--config", (dir / "missing.json").string(), "--out", "x"}) == kExitConfig);
  CHECK(cli({"frobnicate"}) == kExitConfig);
  CHECK(cli({"equilibrium", "--config", two.string()}, &text) == kExitOk);
  CHECK(text.find("Phi*") != std::string::npos);
  CHECK(cli({"check"}) == kExitOk);
  CHECK(cli({"check", "--self-test"}, &text) == kExitCheckFailed);
  CHECK(text.find("FAIL") != std::string::npos);
}
