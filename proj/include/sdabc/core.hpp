#pragma once

// Domain types shared by every sampler: threshold schedules, particles,
// populations and the counter-based random streams.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace sdabc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

class ScheduleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Strictly decreasing tolerance sequence eps_1 > ... > eps_T > 0.
///
/// Indices are 1-based to match the band numbering used throughout the
/// library; eps(T+1) is the implicit 0. Band k is [eps(k+1), eps(k)).
class ThresholdSchedule {
 public:
  ThresholdSchedule() = default;

  static ThresholdSchedule validate(std::vector<double> raw) {
    if (raw.empty()) {
      throw ScheduleError("threshold schedule is empty");
    }
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const double e = raw[i];
      if (std::isnan(e) || e <= 0.0) {
        throw ScheduleError("threshold " + std::to_string(i + 1) + " is not positive");
      }
      if (std::isinf(e) && i != 0) {
        throw ScheduleError("only the first threshold may be infinite (position " +
                            std::to_string(i + 1) + ")");
      }
      if (i > 0 && !(raw[i] < raw[i - 1])) {
        throw ScheduleError("thresholds must be strictly decreasing (position " +
                            std::to_string(i + 1) + ")");
      }
    }
    ThresholdSchedule s;
    s.eps_ = std::move(raw);
    return s;
  }

  int size() const { return static_cast<int>(eps_.size()); }

  // eps(0) and eps(T+1) are both 0 by convention.
  double eps(int k) const {
    if (k <= 0 || k > size()) return 0.0;
    return eps_[static_cast<std::size_t>(k - 1)];
  }

  const std::vector<double>& values() const { return eps_; }

  /// Band index k with eps(k+1) <= d < eps(k), or nullopt when d is not
  /// finite or lies at/above eps(1).
  std::optional<int> stratum_of(double distance) const {
    if (!std::isfinite(distance) || distance < 0.0 || !(distance < eps_.front())) {
      return std::nullopt;
    }
    // Bands are ordered outermost first; scan from the innermost.
    for (int k = size(); k >= 1; --k) {
      if (distance < eps(k)) return k;
    }
    return std::nullopt;  // unreachable: distance < eps(1) above
  }

  /// Landing band used for frequency bookkeeping. Anything that falls
  /// outside every band (simulator sentinel, support rejection, d >= eps_1)
  /// is booked against the outermost band.
  int landing_stratum(double distance) const { return stratum_of(distance).value_or(1); }

  /// Strata a surviving particle at iteration t may occupy: {t, ..., T}.
  std::pair<int, int> active_strata(int t) const {
    if (t < 1 || t > size()) {
      throw std::out_of_range("iteration " + std::to_string(t) + " outside schedule");
    }
    return {t, size()};
  }

 private:
  std::vector<double> eps_;
};

struct Particle {
  Vector theta;
  double weight = 0.0;
  double distance = 0.0;
  int stratum = 1;
};

struct Population {
  std::vector<Particle> particles;
  int iteration = 1;

  std::size_t size() const { return particles.size(); }
  bool empty() const { return particles.empty(); }
  Eigen::Index dim() const { return particles.empty() ? 0 : particles.front().theta.size(); }

  std::vector<double> weights() const {
    std::vector<double> w;
    w.reserve(particles.size());
    for (const auto& p : particles) w.push_back(p.weight);
    return w;
  }

  void normalize() {
    double total = 0.0;
    for (const auto& p : particles) total += p.weight;
    if (!(total > 0.0) || !std::isfinite(total)) {
      throw std::runtime_error("population weights cannot be normalized");
    }
    for (auto& p : particles) p.weight /= total;
  }
};

/// Weighted mean and (population) standard deviation of each coordinate.
inline std::pair<Vector, Vector> weighted_moments(const Population& pop) {
  const auto d = pop.dim();
  Vector mean = Vector::Zero(d);
  double total = 0.0;
  for (const auto& p : pop.particles) {
    mean += p.weight * p.theta;
    total += p.weight;
  }
  mean /= total;
  Vector var = Vector::Zero(d);
  for (const auto& p : pop.particles) {
    var += p.weight * (p.theta - mean).cwiseAbs2();
  }
  var /= total;
  return {mean, var.cwiseSqrt()};
}

inline double effective_sample_size(const std::vector<double>& w) {
  double s = 0.0, s2 = 0.0;
  for (double x : w) {
    s += x;
    s2 += x * x;
  }
  return s2 > 0.0 ? s * s / s2 : 0.0;
}

// ---------------------------------------------------------------------------
// Random streams

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// SplitMix64 generator. Satisfies UniformRandomBitGenerator so it plugs into
/// the <random> distributions.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t state = 0) : state_(state) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

using Engine = SplitMix64;

/// Identifies one independent random stream: a base seed plus a path of
/// counters (e.g. repetition, iteration, proposal index). Streams with equal
/// (seed, path) replay identical draws whatever thread consumes them.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), key_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  RngStream child(std::uint64_t id) const {
    RngStream s = *this;
    s.key_ = splitmix64(key_ ^ splitmix64(id + 0x632be59bd9b4e019ULL));
    return s;
  }

  Engine engine() const { return Engine(key_); }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
};

// Well-known stream tags for the first level below a repetition.
enum class StreamTag : std::uint64_t { Observed = 1, Iteration = 2 };

inline RngStream repetition_stream(std::uint64_t seed, std::uint64_t repetition) {
  return RngStream(seed).child(repetition);
}

inline RngStream tagged(const RngStream& s, StreamTag tag) {
  return s.child(static_cast<std::uint64_t>(tag));
}

}  // namespace sdabc
