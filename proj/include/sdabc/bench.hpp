#pragma once

// Benchmark harness: JSON/flag configuration with named profiles, paired
// multi-repetition experiments, median/IQR aggregation and CSV/JSON output.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sdabc/smc.hpp"

namespace sdabc::bench {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  SmcConfig smc;
  std::vector<KernelPolicy> policies;
  std::size_t repetitions = 1;
  std::string out_dir;
  std::string profile;
};

inline const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys{
      "profile", "model",     "method",         "particles",     "thresholds",   "reps",
      "seed",    "out",       "stop",           "stop_kl",       "stop_min_count", "max_proposals",
      "threads", "lv_horizon", "lv_grid_step", "lv_event_cap"};
  return keys;
}

inline const std::map<std::string, json>& profiles() {
  static const std::map<std::string, json> p{
      {"toy", {{"model", "gaussian_toy"}, {"thresholds", {"inf", 4, 3, 2, 1}}, {"particles", 2000}, {"reps", 1}}},
      {"toy-kl",
       {{"model", "gaussian_toy"},
        {"thresholds", {"inf", 4, 3, 2, 1, 0.8, 0.6, 0.4, 0.2}},
        {"particles", 20000},
        {"reps", 5}}},
      {"banana-desk",
       {{"model", "banana"}, {"thresholds", {"inf", 100, 50, 20, 10, 5, 2, 1}}, {"particles", 500}, {"reps", 10}}},
      {"banana-paper",
       {{"model", "banana"}, {"thresholds", {"inf", 100, 50, 20, 10, 5, 2, 1}}, {"particles", 2000}, {"reps", 50}}},
      {"lv-desk",
       {{"model", "lotka_volterra"},
        {"thresholds", {"inf", 200, 100, 90, 80, 70, 60, 50}},
        {"particles", 200},
        {"reps", 5}}},
      {"lv-paper",
       {{"model", "lotka_volterra"},
        {"thresholds", {"inf", 200, 100, 90, 80, 70, 60, 50}},
        {"particles", 2000},
        {"reps", 50}}},
      {"gk-desk",
       {{"model", "gk"}, {"thresholds", {"inf", 100, 70, 50, 30, 27, 23, 20}}, {"particles", 500}, {"reps", 10}}},
      {"gk-paper",
       {{"model", "gk"}, {"thresholds", {"inf", 100, 70, 50, 30, 27, 23, 20}}, {"particles", 5000}, {"reps", 50}}},
  };
  return p;
}

inline std::string default_out_dir() {
  if (const char* env = std::getenv("SDABC_OUT_DIR"); env && *env) return env;
  return "sdabc_out";
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto piece = trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!piece.empty()) out.push_back(piece);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline double parse_threshold(const json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    std::string s = trim(v.get<std::string>());
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "inf" || s == "+inf" || s == "infinity") return kInfinity;
    double x = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec == std::errc() && ptr == s.data() + s.size()) return x;
  }
  throw ConfigError("thresholds: cannot parse '" + v.dump() + "' as a number");
}

inline std::vector<double> parse_thresholds(const json& v) {
  std::vector<double> out;
  if (v.is_string()) {
    for (const auto& piece : split_list(v.get<std::string>())) out.push_back(parse_threshold(json(piece)));
  } else if (v.is_array()) {
    for (const auto& e : v) out.push_back(parse_threshold(e));
  } else {
    throw ConfigError("thresholds: expected a list");
  }
  return out;
}

template <class T>
T get_integer(const json& obj, const char* key, T min_value) {
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < static_cast<long long>(min_value)) {
    throw ConfigError(std::string(key) + ": expected an integer >= " + std::to_string(min_value));
  }
  return v.get<T>();
}

inline double get_positive(const json& obj, const char* key) {
  const json& v = obj.at(key);
  if (!v.is_number() || !(v.get<double>() > 0.0)) throw ConfigError(std::string(key) + ": expected a positive number");
  return v.get<double>();
}

}  // namespace detail

/// Rejects keys outside the known set, naming the first offender.
inline void check_keys(const json& obj, std::string_view origin) {
  if (!obj.is_object()) throw ConfigError(std::string(origin) + ": configuration must be a JSON object");
  const auto& keys = known_keys();
  for (const auto& [k, _] : obj.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw ConfigError(std::string(origin) + ": unknown key '" + k + "'");
    }
  }
}

/// Layers profile defaults, then `file`, then `flags` (later wins), and
/// validates the result.
inline json merge_layers(const json& file, const json& flags) {
  check_keys(file, "config file");
  check_keys(flags, "command line");
  json merged = json::object();
  std::string profile;
  if (flags.contains("profile")) {
    profile = flags.at("profile").get<std::string>();
  } else if (file.contains("profile")) {
    profile = file.at("profile").get<std::string>();
  }
  if (!profile.empty()) {
    auto it = profiles().find(profile);
    if (it == profiles().end()) throw ConfigError("profile: unknown profile '" + profile + "'");
    merged = it->second;
    merged["profile"] = profile;
  }
  for (const auto& [k, v] : file.items()) merged[k] = v;
  for (const auto& [k, v] : flags.items()) merged[k] = v;
  return merged;
}

inline ExperimentConfig config_from_json(const json& merged) {
  check_keys(merged, "configuration");
  std::vector<std::string> missing;
  for (const char* k : {"model", "thresholds"}) {
    if (!merged.contains(k)) missing.emplace_back(k);
  }
  if (!missing.empty()) {
    std::string msg = "missing required key(s):";
    for (const auto& m : missing) msg += " " + m;
    msg += " (required: model, thresholds)";
    throw ConfigError(msg);
  }

  ExperimentConfig cfg;
  cfg.profile = merged.value("profile", std::string());

  const json& model = merged.at("model");
  if (!model.is_string()) throw ConfigError("model: expected a string");
  cfg.smc.model = model.get<std::string>();
  const auto& names = model_names();
  if (std::find(names.begin(), names.end(), cfg.smc.model) == names.end()) {
    throw ConfigError("model: unknown model '" + cfg.smc.model + "'");
  }

  try {
    cfg.smc.schedule = ThresholdSchedule::validate(detail::parse_thresholds(merged.at("thresholds")));
  } catch (const ScheduleError& e) {
    throw ConfigError(std::string("thresholds: ") + e.what());
  }

  if (merged.contains("particles")) cfg.smc.particles = detail::get_integer<std::size_t>(merged, "particles", 2);
  if (merged.contains("reps")) cfg.repetitions = detail::get_integer<std::size_t>(merged, "reps", 1);
  if (merged.contains("seed")) cfg.smc.seed = detail::get_integer<std::uint64_t>(merged, "seed", 0);
  if (merged.contains("max_proposals")) {
    cfg.smc.max_proposals = detail::get_integer<std::uint64_t>(merged, "max_proposals", 1);
  }
  if (merged.contains("threads")) cfg.smc.threads = detail::get_integer<unsigned>(merged, "threads", 1);

  if (merged.contains("stop_kl")) cfg.smc.stop.kl_threshold = detail::get_positive(merged, "stop_kl");
  if (merged.contains("stop_min_count")) {
    cfg.smc.stop.min_count = detail::get_integer<std::uint64_t>(merged, "stop_min_count", 1);
  }
  if (merged.contains("stop")) {
    if (!merged.at("stop").is_boolean()) throw ConfigError("stop: expected true or false");
    cfg.smc.stop.enabled = merged.at("stop").get<bool>();
  } else {
    cfg.smc.stop.enabled = merged.contains("stop_kl");
  }

  if (merged.contains("lv_horizon")) cfg.smc.model_options.lv.horizon = detail::get_positive(merged, "lv_horizon");
  if (merged.contains("lv_grid_step")) {
    cfg.smc.model_options.lv.grid_step = detail::get_positive(merged, "lv_grid_step");
  }
  if (merged.contains("lv_event_cap")) {
    cfg.smc.model_options.lv.event_cap = detail::get_integer<std::int64_t>(merged, "lv_event_cap", 1);
  }

  std::vector<std::string> methods;
  if (merged.contains("method")) {
    const json& m = merged.at("method");
    if (m.is_string()) {
      methods = detail::split_list(m.get<std::string>());
    } else if (m.is_array()) {
      for (const auto& e : m) {
        if (!e.is_string()) throw ConfigError("method: expected strings");
        methods.push_back(e.get<std::string>());
      }
    } else {
      throw ConfigError("method: expected a string or list");
    }
  } else {
    methods = {"global", "local", "stratified-simple", "stratified"};
  }
  if (methods.empty()) throw ConfigError("method: no methods given");
  for (const auto& name : methods) {
    auto p = parse_policy(name);
    if (!p) throw ConfigError("method: unknown method '" + name + "'");
    if (std::find(cfg.policies.begin(), cfg.policies.end(), *p) != cfg.policies.end()) {
      throw ConfigError("method: duplicate method '" + name + "'");
    }
    cfg.policies.push_back(*p);
  }
  cfg.smc.policy = cfg.policies.front();

  cfg.out_dir = merged.contains("out") ? merged.at("out").get<std::string>() : default_out_dir();

  try {
    cfg.smc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline ExperimentConfig parse_config(const std::optional<std::filesystem::path>& path, const json& flags = json::object()) {
  const json file = path ? read_json_file(*path) : json::object();
  return config_from_json(merge_layers(file, flags));
}

inline json threshold_json(const ThresholdSchedule& s) {
  json arr = json::array();
  for (double e : s.values()) {
    if (std::isinf(e)) {
      arr.push_back("inf");
    } else {
      arr.push_back(e);
    }
  }
  return arr;
}

/// Resolved configuration with every key spelled out.
inline json to_json(const ExperimentConfig& cfg) {
  json j;
  if (!cfg.profile.empty()) j["profile"] = cfg.profile;
  j["model"] = cfg.smc.model;
  json methods = json::array();
  for (auto p : cfg.policies) methods.push_back(std::string(to_string(p)));
  j["method"] = methods;
  j["particles"] = cfg.smc.particles;
  j["thresholds"] = threshold_json(cfg.smc.schedule);
  j["reps"] = cfg.repetitions;
  j["seed"] = cfg.smc.seed;
  j["out"] = cfg.out_dir;
  j["stop"] = cfg.smc.stop.enabled;
  j["stop_kl"] = cfg.smc.stop.kl_threshold;
  j["stop_min_count"] = cfg.smc.stop.min_count;
  j["max_proposals"] = cfg.smc.max_proposals;
  j["threads"] = cfg.smc.threads;
  if (cfg.smc.model == "lotka_volterra") {
    j["lv_horizon"] = cfg.smc.model_options.lv.horizon;
    j["lv_grid_step"] = cfg.smc.model_options.lv.grid_step;
    j["lv_event_cap"] = cfg.smc.model_options.lv.event_cap;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Experiment

struct Repetition {
  std::uint64_t index = 0;
  Vector observed;
  std::vector<RunRecord> runs;  // one per policy, in config order
};

struct ExperimentResult {
  std::vector<std::string> parameter_names;
  std::vector<Repetition> repetitions;
};

/// Every policy in a repetition sees the same observation and the same base
/// random streams; repetition r uses base seed + r.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const auto model = make_model(cfg.smc.model, cfg.smc.model_options);
  ExperimentResult result;
  result.parameter_names = model->parameter_names();
  for (std::size_t r = 0; r < cfg.repetitions; ++r) {
    Repetition rep;
    rep.index = r;
    SmcConfig smc = cfg.smc;
    smc.seed = cfg.smc.seed + r;
    rep.observed = model->make_observed(tagged(repetition_stream(smc.seed, 0), StreamTag::Observed));
    for (auto policy : cfg.policies) {
      smc.policy = policy;
      RunRecord rec = run(*model, rep.observed, smc, 0);
      rec.repetition = r;
      rep.runs.push_back(std::move(rec));
    }
    result.repetitions.push_back(std::move(rep));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Aggregation

/// Quartiles by linear interpolation between order statistics; n == 0 marks
/// a missing cell.
struct Quartiles {
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  std::size_t n = 0;
};

inline double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

inline Quartiles quartiles(std::vector<double> v) {
  Quartiles q;
  q.n = v.size();
  if (v.empty()) return q;
  std::sort(v.begin(), v.end());
  q.median = quantile_sorted(v, 0.5);
  q.q25 = quantile_sorted(v, 0.25);
  q.q75 = quantile_sorted(v, 0.75);
  return q;
}

struct AggregateRow {
  KernelPolicy policy = KernelPolicy::StratifiedFull;
  int iteration = 0;
  Quartiles acceptance;
  Quartiles cumulative_generated;
  Quartiles kl_target;
  Quartiles kl_consecutive;
  std::vector<Quartiles> mean;  // per parameter
  std::vector<Quartiles> sd;
};

struct AggregateTable {
  std::vector<std::string> parameter_names;
  std::vector<AggregateRow> rows;  // policy order of the config, then iteration
};

inline AggregateTable aggregate(const ExperimentResult& result, const std::vector<KernelPolicy>& policies) {
  AggregateTable table;
  table.parameter_names = result.parameter_names;
  const std::size_t dim = result.parameter_names.size();
  for (std::size_t pi = 0; pi < policies.size(); ++pi) {
    int max_iter = 0;
    for (const auto& rep : result.repetitions) {
      max_iter = std::max(max_iter, static_cast<int>(rep.runs[pi].iterations.size()));
    }
    for (int t = 1; t <= max_iter; ++t) {
      std::vector<double> acc, cum, klt, klc;
      std::vector<std::vector<double>> means(dim), sds(dim);
      for (const auto& rep : result.repetitions) {
        const auto& its = rep.runs[pi].iterations;
        if (static_cast<int>(its.size()) < t) continue;
        const auto& it = its[static_cast<std::size_t>(t - 1)];
        acc.push_back(it.acceptance_rate);
        double total = 0.0;
        for (int s = 0; s < t; ++s) total += static_cast<double>(its[static_cast<std::size_t>(s)].generated);
        cum.push_back(total);
        if (it.kl_target) klt.push_back(*it.kl_target);
        if (it.kl_consecutive) klc.push_back(*it.kl_consecutive);
        for (std::size_t d = 0; d < dim; ++d) {
          means[d].push_back(it.mean[d]);
          sds[d].push_back(it.sd[d]);
        }
      }
      AggregateRow row;
      row.policy = policies[pi];
      row.iteration = t;
      row.acceptance = quartiles(acc);
      row.cumulative_generated = quartiles(cum);
      row.kl_target = quartiles(klt);
      row.kl_consecutive = quartiles(klc);
      for (std::size_t d = 0; d < dim; ++d) {
        row.mean.push_back(quartiles(means[d]));
        row.sd.push_back(quartiles(sds[d]));
      }
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Output

/// Shortest round-trip decimal form.
inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ptr);
}

inline std::string quartile_fields(const Quartiles& q) {
  if (q.n == 0) return ",,";
  return format_number(q.median) + "," + format_number(q.q25) + "," + format_number(q.q75);
}

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json run_to_json(const RunRecord& run, const Repetition& rep) {
  json j;
  j["repetition"] = rep.index;
  j["policy"] = std::string(to_string(run.policy));
  j["model"] = run.model;
  j["observed"] = std::vector<double>(rep.observed.data(), rep.observed.data() + rep.observed.size());
  j["stopped_early"] = run.stopped_early;
  j["aborted"] = run.aborted;
  j["abort_reason"] = run.abort_reason;
  json its = json::array();
  for (const auto& it : run.iterations) {
    its.push_back({{"iteration", it.iteration},
                   {"accepted", it.accepted},
                   {"generated", it.generated},
                   {"acceptance_rate", it.acceptance_rate},
                   {"mean", it.mean},
                   {"sd", it.sd},
                   {"ess", it.ess},
                   {"kl_target", optional_json(it.kl_target)},
                   {"kl_consecutive", optional_json(it.kl_consecutive)},
                   {"target_count", it.target_count}});
  }
  j["iterations"] = its;
  json layers = json::array();
  for (int m = 1; m <= run.frequencies.iterations(); ++m) layers.push_back(run.frequencies.layer(m));
  j["frequencies"] = {{"strata", run.frequencies.strata()}, {"layers", layers}};
  return j;
}

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

inline void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw std::runtime_error("I/O error while writing '" + path.string() + "'");
}

}  // namespace detail

/// Writes acceptance_rates.csv, cumulative_samples.csv,
/// posterior_summary.csv, kl_trace.csv, runs.json and config.json.
inline void write_outputs(const AggregateTable& table, const ExperimentResult& result, const ExperimentConfig& cfg,
                          const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + dir.string() + "': " + ec.message());

  auto write_csv = [&](const char* name, const std::string& header, auto&& body) {
    const auto path = dir / name;
    auto out = detail::open_output(path);
    out << header << '\n';
    for (const auto& row : table.rows) body(out, row);
    detail::finish(out, path);
  };
  auto prefix = [](const AggregateRow& row) {
    return std::string(to_string(row.policy)) + "," + std::to_string(row.iteration) + ",";
  };

  write_csv("acceptance_rates.csv", "policy,iteration,median,q25,q75", [&](std::ostream& out, const AggregateRow& r) {
    out << prefix(r) << quartile_fields(r.acceptance) << '\n';
  });
  write_csv("cumulative_samples.csv", "policy,iteration,median,q25,q75",
            [&](std::ostream& out, const AggregateRow& r) {
              out << prefix(r) << quartile_fields(r.cumulative_generated) << '\n';
            });
  write_csv("posterior_summary.csv", "policy,iteration,parameter,median_mean,median_sd,lower,upper",
            [&](std::ostream& out, const AggregateRow& r) {
              for (std::size_t d = 0; d < r.mean.size(); ++d) {
                out << prefix(r) << table.parameter_names[d] << ',';
                if (r.mean[d].n == 0) {
                  out << ",,,\n";
                  continue;
                }
                const double m = r.mean[d].median, s = r.sd[d].median;
                out << format_number(m) << ',' << format_number(s) << ',' << format_number(m - 1.96 * s) << ','
                    << format_number(m + 1.96 * s) << '\n';
              }
            });
  write_csv("kl_trace.csv", "policy,iteration,median,q25,q75,consecutive_median,consecutive_q25,consecutive_q75",
            [&](std::ostream& out, const AggregateRow& r) {
              out << prefix(r) << quartile_fields(r.kl_target) << ',' << quartile_fields(r.kl_consecutive) << '\n';
            });

  json runs = json::array();
  for (const auto& rep : result.repetitions) {
    for (const auto& run : rep.runs) runs.push_back(run_to_json(run, rep));
  }
  {
    const auto path = dir / "runs.json";
    auto out = detail::open_output(path);
    out << runs.dump(1) << '\n';
    detail::finish(out, path);
  }
  {
    const auto path = dir / "config.json";
    auto out = detail::open_output(path);
    out << to_json(cfg).dump(2) << '\n';
    detail::finish(out, path);
  }
}

/// Parses one of the emitted quartile CSVs back into rows of numbers; empty
/// fields come back as nullopt.
struct CsvRow {
  std::vector<std::string> keys;
  std::vector<std::optional<double>> values;
};

inline std::vector<CsvRow> read_csv(const std::filesystem::path& path, std::size_t key_columns) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::string line;
  std::getline(in, line);  // header
  std::vector<CsvRow> rows;
  while (std::getline(in, line)) {
    CsvRow row;
    std::size_t start = 0, col = 0;
    while (true) {
      const auto comma = line.find(',', start);
      const std::string field = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (col < key_columns) {
        row.keys.push_back(field);
      } else if (field.empty()) {
        row.values.emplace_back(std::nullopt);
      } else {
        double x = 0.0;
        auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), x);
        if (ec != std::errc() || ptr != field.data() + field.size()) {
          throw std::runtime_error("bad number '" + field + "' in " + path.string());
        }
        row.values.emplace_back(x);
      }
      ++col;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace sdabc::bench
