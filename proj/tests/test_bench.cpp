#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sdabc/bench.hpp"

using namespace sdabc;
using namespace sdabc::bench;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("sdabc_test_" + name);
  fs::remove_all(dir);
  return dir;
}

const std::vector<std::string> kFiles{"acceptance_rates.csv", "cumulative_samples.csv", "posterior_summary.csv",
                                      "kl_trace.csv",         "runs.json",              "config.json"};

ExperimentConfig small_banana(const fs::path& out) {
  json j{{"model", "banana"},
         {"thresholds", "inf,100,50,20,10"},
         {"particles", 100},
         {"reps", 2},
         {"seed", 3},
         {"method", "local,stratified"},
         {"out", out.string()}};
  return config_from_json(j);
}

}  // namespace

TEST_CASE("config parsing", "[bench]") {
  const json ok{{"model", "banana"}, {"thresholds", {"inf", 100, 50, 20, 10, 5, 2, 1}}, {"particles", 2000}};
  const auto cfg = config_from_json(ok);
  CHECK(cfg.smc.particles == 2000);
  CHECK(cfg.smc.schedule.size() == 8);
  CHECK(cfg.policies.size() == 4);
  CHECK_FALSE(cfg.smc.stop.enabled);

  CHECK_THROWS_AS(config_from_json({{"model", "banana"}, {"thresholds", "inf,50,100"}}), ConfigError);
  try {
    config_from_json({{"thresholds", "inf,2,1"}});
    FAIL("missing model accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("model") != std::string::npos);
  }
  try {
    config_from_json({{"model", "banana"}, {"thresholds", "inf,2,1"}, {"partcles", 3}});
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("partcles") != std::string::npos);
  }
  CHECK_THROWS_AS(config_from_json({{"model", "banana"}, {"thresholds", "inf,2,1"}, {"method", "local,local"}}),
                  ConfigError);
  CHECK_THROWS_AS(config_from_json({{"model", "banana"}, {"thresholds", "inf,2,1"}, {"particles", 1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"model", "pear"}, {"thresholds", "inf,2,1"}}), ConfigError);
}

TEST_CASE("profiles and flags layer in order", "[bench]") {
  const auto cfg = parse_config(std::nullopt, {{"profile", "banana-desk"}, {"particles", 50}});
  CHECK(cfg.smc.model == "banana");
  CHECK(cfg.smc.particles == 50);
  CHECK(cfg.repetitions == 10);
  for (const auto& [name, body] : profiles()) {
    CHECK_NOTHROW(parse_config(std::nullopt, {{"profile", name}}));
  }
  const auto stop = parse_config(std::nullopt, {{"profile", "toy"}, {"stop_kl", 0.1}});
  CHECK(stop.smc.stop.enabled);
  CHECK(stop.smc.stop.kl_threshold == 0.1);
}

TEST_CASE("quartiles interpolate linearly", "[bench]") {
  const auto q = quartiles({4, 1, 3, 2});
  CHECK(q.median == 2.5);
  CHECK(q.q25 == 1.75);
  CHECK(q.q75 == 3.25);
  CHECK(quartiles({}).n == 0);
  const auto one = quartiles({7});
  CHECK((one.median == 7 && one.q25 == 7 && one.q75 == 7));
}

TEST_CASE("single repetition aggregates to the run values", "[bench]") {
  auto cfg = small_banana(scratch("one"));
  cfg.repetitions = 1;
  const auto result = run_experiment(cfg);
  const auto table = aggregate(result, cfg.policies);
  for (const auto& row : table.rows) {
    const std::size_t pi = row.policy == cfg.policies[0] ? 0 : 1;
    const auto& it = result.repetitions[0].runs[pi].iterations[static_cast<std::size_t>(row.iteration - 1)];
    CHECK(row.acceptance.median == it.acceptance_rate);
    CHECK(row.acceptance.q25 == it.acceptance_rate);
    CHECK(row.mean[1].median == it.mean[1]);
    CHECK(row.acceptance.q25 <= row.acceptance.median);
    CHECK(row.acceptance.median <= row.acceptance.q75);
  }
}

TEST_CASE("policies share the observation and the prior round", "[bench]") {
  const auto cfg = small_banana(scratch("paired"));
  const auto result = run_experiment(cfg);
  for (const auto& rep : result.repetitions) {
    REQUIRE(rep.runs.size() == 2);
    CHECK(rep.runs[0].iterations[0].acceptance_rate == rep.runs[1].iterations[0].acceptance_rate);
    CHECK(rep.runs[0].iterations[0].mean == rep.runs[1].iterations[0].mean);
  }
  CHECK(result.repetitions[0].observed != result.repetitions[1].observed);
}

TEST_CASE("empty results give header-only CSVs", "[bench]") {
  const auto dir = scratch("empty");
  auto cfg = small_banana(dir);
  const ExperimentResult empty{{"theta1", "theta2"}, {}};
  write_outputs(aggregate(empty, cfg.policies), empty, cfg, dir);
  CHECK(slurp(dir / "acceptance_rates.csv") == "policy,iteration,median,q25,q75\n");
  CHECK(slurp(dir / "posterior_summary.csv") == "policy,iteration,parameter,median_mean,median_sd,lower,upper\n");
  CHECK(read_csv(dir / "kl_trace.csv", 2).empty());
}

TEST_CASE("outputs are reproducible and round-trip", "[bench]") {
  const auto a = scratch("rerun_a"), b = scratch("rerun_b"), c = scratch("rerun_c");
  auto cfg = small_banana(a);
  const auto result = run_experiment(cfg);
  const auto table = aggregate(result, cfg.policies);
  write_outputs(table, result, cfg, a);

  cfg.out_dir = b.string();
  const auto again = run_experiment(cfg);
  write_outputs(aggregate(again, cfg.policies), again, cfg, b);
  for (const auto& f : kFiles) {
    if (f == "config.json") continue;  // echoes the output directory
    CHECK(slurp(a / f) == slurp(b / f));
  }

  // CSV values parse back to the aggregate exactly.
  const auto rows = read_csv(a / "acceptance_rates.csv", 2);
  REQUIRE(rows.size() == table.rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].keys[0] == to_string(table.rows[i].policy));
    CHECK(rows[i].keys[1] == std::to_string(table.rows[i].iteration));
    CHECK(rows[i].values[0] == table.rows[i].acceptance.median);
    CHECK(rows[i].values[1] == table.rows[i].acceptance.q25);
    CHECK(rows[i].values[2] == table.rows[i].acceptance.q75);
  }
  const auto post = read_csv(a / "posterior_summary.csv", 3);
  for (const auto& r : post) {
    CHECK(*r.values[2] == *r.values[0] - 1.96 * *r.values[1]);
    CHECK(*r.values[3] == *r.values[0] + 1.96 * *r.values[1]);
  }

  // Feeding the echoed config back reproduces the outputs.
  json echoed = json::parse(slurp(a / "config.json"));
  echoed["out"] = c.string();
  const auto cfg2 = config_from_json(echoed);
  const auto third = run_experiment(cfg2);
  write_outputs(aggregate(third, cfg2.policies), third, cfg2, c);
  for (const auto& f : kFiles) {
    if (f == "config.json") continue;
    CHECK(slurp(a / f) == slurp(c / f));
  }
  CHECK(to_json(cfg2).dump() == echoed.dump());
}

TEST_CASE("format_number is shortest round trip", "[bench]") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(1.0) == "1");
  CHECK(format_number(kInfinity) == "inf");
  const double x = 1.0 / 3.0;
  CHECK(std::stod(format_number(x)) == x);
}
