// sdabc: command-line driver for the ABC-SMC benchmark harness.
//
//   sdabc run --config cfg.json [--model M --method stratified --particles N ...]
//   sdabc list-models
//   sdabc validate --config cfg.json
//
// Exit codes: 0 success, 1 configuration error, 2 runtime abort.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sdabc/sdabc.hpp"

namespace {

constexpr int kConfigError = 1;
constexpr int kRuntimeAbort = 2;

struct RunFlags {
  std::string config;
  std::string profile;
  std::string model;
  std::vector<std::string> methods;
  std::size_t particles = 0;
  std::string thresholds;
  std::size_t reps = 0;
  std::uint64_t seed = 0;
  std::string out;
  double stop_kl = 0.0;
  std::uint64_t stop_min_count = 0;
  std::uint64_t max_proposals = 0;
  unsigned threads = 0;
  bool stop = false;
  bool no_stop = false;
};

sdabc::bench::json flags_to_json(const CLI::App& cmd, const RunFlags& f) {
  sdabc::bench::json j = sdabc::bench::json::object();
  auto given = [&](const char* name) { return cmd.count(name) > 0; };
  if (given("--profile")) j["profile"] = f.profile;
  if (given("--model")) j["model"] = f.model;
  if (given("--method")) {
    std::vector<std::string> all;
    for (const auto& m : f.methods) {
      for (auto& piece : sdabc::bench::detail::split_list(m)) all.push_back(piece);
    }
    j["method"] = all;
  }
  if (given("--particles")) j["particles"] = f.particles;
  if (given("--thresholds")) j["thresholds"] = f.thresholds;
  if (given("--reps")) j["reps"] = f.reps;
  if (given("--seed")) j["seed"] = f.seed;
  if (given("--out")) j["out"] = f.out;
  if (given("--stop-kl")) j["stop_kl"] = f.stop_kl;
  if (given("--stop-min-count")) j["stop_min_count"] = f.stop_min_count;
  if (given("--max-proposals")) j["max_proposals"] = f.max_proposals;
  if (given("--threads")) j["threads"] = f.threads;
  if (given("--stop")) j["stop"] = true;
  if (given("--no-stop")) j["stop"] = false;
  return j;
}

void add_run_flags(CLI::App& cmd, RunFlags& f) {
  cmd.add_option("--config", f.config, "JSON configuration file");
  cmd.add_option("--profile", f.profile, "named preset (banana-desk, banana-paper, lv-desk, gk-desk, toy, ...)");
  cmd.add_option("--model", f.model, "gaussian_toy | banana | lotka_volterra | gk");
  cmd.add_option("--method", f.methods, "global | local | stratified-simple | stratified (repeatable)");
  cmd.add_option("--particles", f.particles, "particles per iteration");
  cmd.add_option("--thresholds", f.thresholds, "comma separated, e.g. inf,4,3,2,1");
  cmd.add_option("--reps", f.reps, "repetitions");
  cmd.add_option("--seed", f.seed, "base seed (repetition r uses seed + r)");
  cmd.add_option("--out", f.out, "output directory (default $SDABC_OUT_DIR or ./sdabc_out)");
  cmd.add_option("--stop-kl", f.stop_kl, "enable KL early stopping with this threshold");
  cmd.add_option("--stop-min-count", f.stop_min_count, "minimum target-column count before stopping");
  cmd.add_option("--max-proposals", f.max_proposals, "proposal cap per iteration");
  cmd.add_option("--threads", f.threads, "worker threads for proposal generation");
  cmd.add_flag("--stop", f.stop, "enable early stopping");
  cmd.add_flag("--no-stop", f.no_stop, "disable early stopping");
}

std::optional<std::filesystem::path> config_path(const RunFlags& f) {
  if (f.config.empty()) return std::nullopt;
  return std::filesystem::path(f.config);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stratified-distance ABC-SMC benchmark harness"};
  app.require_subcommand(1);

  RunFlags run_flags;
  auto* run_cmd = app.add_subcommand("run", "run an experiment and write CSV/JSON outputs");
  add_run_flags(*run_cmd, run_flags);

  RunFlags validate_flags;
  auto* validate_cmd = app.add_subcommand("validate", "check a configuration without running it");
  add_run_flags(*validate_cmd, validate_flags);

  auto* list_cmd = app.add_subcommand("list-models", "print the built-in simulator models");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  if (list_cmd->parsed()) {
    for (const auto& name : sdabc::model_names()) {
      const auto model = sdabc::make_model(name);
      std::cout << name << "\t" << model->dim() << " parameters:";
      for (const auto& p : model->parameter_names()) std::cout << ' ' << p;
      std::cout << '\n';
    }
    return 0;
  }

  const bool validating = validate_cmd->parsed();
  const RunFlags& flags = validating ? validate_flags : run_flags;
  const CLI::App& cmd = validating ? *validate_cmd : *run_cmd;

  sdabc::bench::ExperimentConfig cfg;
  try {
    cfg = sdabc::bench::parse_config(config_path(flags), flags_to_json(cmd, flags));
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }

  if (validating) {
    std::cout << sdabc::bench::to_json(cfg).dump(2) << '\n';
    return 0;
  }

  try {
    const auto result = sdabc::bench::run_experiment(cfg);
    const auto table = sdabc::bench::aggregate(result, cfg.policies);
    sdabc::bench::write_outputs(table, result, cfg, cfg.out_dir);

    int aborted = 0;
    for (const auto& rep : result.repetitions) {
      for (const auto& r : rep.runs) {
        if (r.aborted) {
          ++aborted;
          std::cerr << "repetition " << rep.index << " [" << sdabc::to_string(r.policy) << "]: " << r.abort_reason
                    << '\n';
        }
      }
    }
    std::cout << "wrote " << cfg.out_dir << '\n';
    return aborted > 0 ? kRuntimeAbort : 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeAbort;
  }
}
