#pragma once

// Simulator models: the capability contract and the four built-in benchmarks.

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sdabc/core.hpp"

namespace sdabc {

/// Axis-aligned support of a uniform prior.
struct Box {
  Vector lower;
  Vector upper;

  bool contains(const Vector& x) const {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (!(x[i] >= lower[i] && x[i] <= upper[i])) return false;
    }
    return true;
  }

  double volume() const { return (upper - lower).prod(); }
};

/// A simulator with a uniform prior, a summary-producing simulate() and a
/// distance between summaries.
///
/// simulate() returns nullopt when the run cannot produce a finite summary
/// (event cap exceeded, degenerate statistics); discrepancy() turns that
/// into an infinite distance so the proposal is never accepted.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::string_view name() const = 0;
  virtual const Box& prior_box() const = 0;
  virtual Vector true_parameter() const = 0;
  virtual std::vector<std::string> parameter_names() const = 0;
  virtual std::optional<Vector> simulate(const Vector& theta, Engine& eng) const = 0;

  virtual double distance(const Vector& a, const Vector& b) const { return (a - b).norm(); }

  /// Observed summary for one repetition. Defaults to a single simulation at
  /// the true parameter, retried on a fresh child stream if it fails.
  virtual Vector make_observed(const RngStream& stream) const {
    const Vector theta0 = true_parameter();
    for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
      Engine eng = stream.child(attempt).engine();
      if (auto s = simulate(theta0, eng)) return *std::move(s);
    }
    throw std::runtime_error(std::string(name()) + ": could not simulate observed data");
  }

  Eigen::Index dim() const { return prior_box().lower.size(); }

  Vector prior_sample(Engine& eng) const {
    const Box& box = prior_box();
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Vector x(box.lower.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      x[i] = box.lower[i] + (box.upper[i] - box.lower[i]) * unif(eng);
    }
    return x;
  }

  double prior_density(const Vector& theta) const {
    const Box& box = prior_box();
    return box.contains(theta) ? 1.0 / box.volume() : 0.0;
  }

  double discrepancy(const Vector& theta, const Vector& observed, Engine& eng) const {
    auto s = simulate(theta, eng);
    if (!s) return kInfinity;
    const double d = distance(*s, observed);
    return std::isfinite(d) ? d : kInfinity;
  }
};

// ---------------------------------------------------------------------------
// Gaussian toy: y ~ N(theta, 1), theta ~ U[-6, 6], observed y = 0.

class GaussianToyModel final : public Model {
 public:
  GaussianToyModel() : box_{Vector::Constant(1, -6.0), Vector::Constant(1, 6.0)} {}

  std::string_view name() const override { return "gaussian_toy"; }
  const Box& prior_box() const override { return box_; }
  Vector true_parameter() const override { return Vector::Zero(1); }
  std::vector<std::string> parameter_names() const override { return {"theta"}; }

  std::optional<Vector> simulate(const Vector& theta, Engine& eng) const override {
    std::normal_distribution<double> noise(0.0, 1.0);
    return Vector::Constant(1, theta[0] + noise(eng));
  }

  double distance(const Vector& a, const Vector& b) const override { return std::abs(a[0] - b[0]); }

  // The observation is fixed rather than redrawn per repetition.
  Vector make_observed(const RngStream&) const override { return Vector::Zero(1); }

 private:
  Box box_;
};

// ---------------------------------------------------------------------------
// Banana: y ~ N((t1, t1 + t2^2), diag(1, 0.5)), t ~ U[-50, 50]^2.

class BananaModel final : public Model {
 public:
  BananaModel() : box_{Vector::Constant(2, -50.0), Vector::Constant(2, 50.0)} {}

  std::string_view name() const override { return "banana"; }
  const Box& prior_box() const override { return box_; }
  Vector true_parameter() const override { return Vector::Zero(2); }
  std::vector<std::string> parameter_names() const override { return {"theta1", "theta2"}; }

  static Vector mean(const Vector& theta) {
    Vector m(2);
    m << theta[0], theta[0] + theta[1] * theta[1];
    return m;
  }

  std::optional<Vector> simulate(const Vector& theta, Engine& eng) const override {
    std::normal_distribution<double> noise(0.0, 1.0);
    Vector y = mean(theta);
    y[0] += noise(eng);
    y[1] += std::sqrt(0.5) * noise(eng);
    return y;
  }

 private:
  Box box_;
};

// ---------------------------------------------------------------------------
// g-and-k: 50 sorted draws through the quantile transform.

inline double gk_quantile(double z, double a, double b, double g, double k) {
  // (1 - e^{-gz}) / (1 + e^{-gz}) == tanh(gz / 2)
  return a + b * (1.0 + 0.8 * std::tanh(0.5 * g * z)) * std::pow(1.0 + z * z, k) * z;
}

class GkModel final : public Model {
 public:
  static constexpr int kDraws = 50;

  GkModel() {
    box_.lower = Vector::Zero(4);
    box_.upper = Vector(4);
    box_.upper << 5.0, 5.0, 5.0, 2.0;
  }

  std::string_view name() const override { return "gk"; }
  const Box& prior_box() const override { return box_; }
  Vector true_parameter() const override {
    Vector t(4);
    t << 3.0, 1.0, 2.0, 0.5;
    return t;
  }
  std::vector<std::string> parameter_names() const override { return {"A", "B", "g", "k"}; }

  std::optional<Vector> simulate(const Vector& theta, Engine& eng) const override {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> y(kDraws);
    for (auto& v : y) v = gk_quantile(normal(eng), theta[0], theta[1], theta[2], theta[3]);
    std::sort(y.begin(), y.end());
    return Eigen::Map<const Vector>(y.data(), kDraws);
  }

 private:
  Box box_;
};

// ---------------------------------------------------------------------------
// Lotka-Volterra stochastic kinetics, exact Gillespie simulation.

struct LvConfig {
  double horizon = 30.0;
  double grid_step = 0.2;
  std::int64_t event_cap = 200000;
  int initial_prey = 100;
  int initial_predators = 50;

  int grid_points() const { return static_cast<int>(std::floor(horizon / grid_step + 1e-9)) + 1; }
};

struct GillespieEvent {
  double dwell;
  int reaction;  // 1, 2 or 3
};

/// One SSA step. Returns nullopt when the total hazard is zero (absorbed).
inline std::optional<GillespieEvent> gillespie_step(const std::array<double, 3>& hazards, Engine& eng) {
  const double total = hazards[0] + hazards[1] + hazards[2];
  if (!(total > 0.0)) return std::nullopt;
  std::exponential_distribution<double> dwell(total);
  std::uniform_real_distribution<double> unif(0.0, total);
  const double u = unif(eng);
  const double t = dwell(eng);
  int reaction = 3;
  if (u < hazards[0]) {
    reaction = 1;
  } else if (u < hazards[0] + hazards[1]) {
    reaction = 2;
  }
  // Guard against u landing on a zero-hazard reaction through rounding.
  while (hazards[static_cast<std::size_t>(reaction - 1)] <= 0.0) reaction = reaction % 3 + 1;
  return GillespieEvent{t, reaction};
}

struct LvTrajectory {
  std::vector<double> event_times;
  std::vector<std::int64_t> prey;       // state after each event, index 0 is initial
  std::vector<std::int64_t> predators;
  std::vector<int> reactions;
  std::vector<double> grid_prey;
  std::vector<double> grid_predators;
  bool capped = false;
};

inline std::array<double, 3> lv_hazards(const std::array<double, 3>& rates, std::int64_t x1, std::int64_t x2) {
  const double a = static_cast<double>(x1), b = static_cast<double>(x2);
  return {rates[0] * a, rates[1] * a * b, rates[2] * b};
}

/// Runs the SSA to the horizon and reads the state on the grid. Event-level
/// history is kept only when record_events is set.
inline LvTrajectory simulate_lv(const std::array<double, 3>& rates, const LvConfig& cfg, Engine& eng,
                                bool record_events = false) {
  LvTrajectory tr;
  std::int64_t x1 = cfg.initial_prey, x2 = cfg.initial_predators;
  const int n_grid = cfg.grid_points();
  tr.grid_prey.reserve(static_cast<std::size_t>(n_grid));
  tr.grid_predators.reserve(static_cast<std::size_t>(n_grid));
  if (record_events) {
    tr.event_times.push_back(0.0);
    tr.prey.push_back(x1);
    tr.predators.push_back(x2);
  }

  double now = 0.0;
  int next_grid = 0;
  std::int64_t events = 0;
  auto fill_grid_until = [&](double t_end) {
    while (next_grid < n_grid && next_grid * cfg.grid_step < t_end) {
      tr.grid_prey.push_back(static_cast<double>(x1));
      tr.grid_predators.push_back(static_cast<double>(x2));
      ++next_grid;
    }
  };

  while (next_grid < n_grid) {
    auto ev = gillespie_step(lv_hazards(rates, x1, x2), eng);
    if (!ev) {
      fill_grid_until(kInfinity);
      break;
    }
    const double t_next = now + ev->dwell;
    fill_grid_until(t_next);
    if (next_grid >= n_grid) break;
    if (++events > cfg.event_cap) {
      tr.capped = true;
      break;
    }
    now = t_next;
    switch (ev->reaction) {
      case 1: x1 += 1; break;
      case 2: x1 -= 1; x2 += 1; break;
      default: x2 -= 1; break;
    }
    if (record_events) {
      tr.event_times.push_back(now);
      tr.prey.push_back(x1);
      tr.predators.push_back(x2);
      tr.reactions.push_back(ev->reaction);
    }
  }
  return tr;
}

/// Lag-l sample autocorrelation with full-series mean and variance; 0 for a
/// constant series.
inline double autocorrelation(const std::vector<double>& x, std::size_t lag) {
  const std::size_t n = x.size();
  if (n <= lag) return 0.0;
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double denom = 0.0;
  for (double v : x) denom += (v - mean) * (v - mean);
  if (denom == 0.0) return 0.0;
  double num = 0.0;
  for (std::size_t i = 0; i + lag < n; ++i) num += (x[i] - mean) * (x[i + lag] - mean);
  return num / denom;
}

inline double series_mean(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double series_variance(const std::vector<double>& x) {
  const double m = series_mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size());
}

/// S1..S8: means, log-variances, lag-1 and lag-2 autocorrelations (prey
/// before predator within each pair). nullopt if any entry is not finite.
inline std::optional<Vector> lv_summaries(const std::vector<double>& prey, const std::vector<double>& pred) {
  Vector s(8);
  s << series_mean(prey), series_mean(pred), std::log(series_variance(prey)), std::log(series_variance(pred)),
      autocorrelation(prey, 1), autocorrelation(pred, 1), autocorrelation(prey, 2), autocorrelation(pred, 2);
  if (!s.allFinite()) return std::nullopt;
  return s;
}

/// Parameters are log reaction rates.
class LotkaVolterraModel final : public Model {
 public:
  explicit LotkaVolterraModel(LvConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg.horizon > 0.0) || !(cfg.grid_step > 0.0) || cfg.event_cap <= 0) {
      throw std::invalid_argument("Lotka-Volterra horizon, grid step and event cap must be positive");
    }
    box_ = {Vector::Constant(3, -6.0), Vector::Constant(3, 1.0)};
  }

  std::string_view name() const override { return "lotka_volterra"; }
  const Box& prior_box() const override { return box_; }
  Vector true_parameter() const override {
    Vector t(3);
    t << std::log(2.0), std::log(0.01), std::log(1.0);
    return t;
  }
  std::vector<std::string> parameter_names() const override { return {"log_r1", "log_r2", "log_r3"}; }

  const LvConfig& config() const { return cfg_; }

  std::optional<Vector> simulate(const Vector& theta, Engine& eng) const override {
    const std::array<double, 3> rates{std::exp(theta[0]), std::exp(theta[1]), std::exp(theta[2])};
    const LvTrajectory tr = simulate_lv(rates, cfg_, eng);
    if (tr.capped) return std::nullopt;
    return lv_summaries(tr.grid_prey, tr.grid_predators);
  }

 private:
  LvConfig cfg_;
  Box box_;
};

// ---------------------------------------------------------------------------
// Registry

struct ModelOptions {
  LvConfig lv;
};

inline const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names{"gaussian_toy", "banana", "lotka_volterra", "gk"};
  return names;
}

inline std::unique_ptr<Model> make_model(std::string_view name, const ModelOptions& opts = {}) {
  if (name == "gaussian_toy") return std::make_unique<GaussianToyModel>();
  if (name == "banana") return std::make_unique<BananaModel>();
  if (name == "lotka_volterra") return std::make_unique<LotkaVolterraModel>(opts.lv);
  if (name == "gk") return std::make_unique<GkModel>();
  throw std::invalid_argument("unknown model '" + std::string(name) + "'");
}

}  // namespace sdabc
