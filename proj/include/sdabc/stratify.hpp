#pragma once

// Landing-band frequency bookkeeping, the cumulative predictive matrix,
// strata weights, importance reweighting and the KL stopping statistic.

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdabc/core.hpp"

namespace sdabc {

/// Counts f[l][k][m]: proposals whose parent sat in band k at iteration m and
/// whose simulated output landed in band l. All indices are 1-based.
class FrequencyTensor {
 public:
  explicit FrequencyTensor(int strata = 1) : strata_(strata), cumulative_(cells(), 0) {
    if (strata < 1) throw std::invalid_argument("frequency tensor needs at least one stratum");
  }

  int strata() const { return strata_; }
  int iterations() const { return static_cast<int>(layers_.size()); }

  void record(int landing, int source, int iteration, std::uint64_t n = 1) {
    check(landing, "landing");
    check(source, "source");
    if (iteration < 1) throw std::out_of_range("iteration index must be >= 1");
    ensure_iteration(iteration);
    layers_[static_cast<std::size_t>(iteration - 1)][index(landing, source)] += n;
    cumulative_[index(landing, source)] += n;
  }

  std::uint64_t count(int landing, int source, int iteration) const {
    check(landing, "landing");
    check(source, "source");
    if (iteration < 1 || iteration > iterations()) return 0;
    return layers_[static_cast<std::size_t>(iteration - 1)][index(landing, source)];
  }

  /// Sum over every recorded iteration.
  std::uint64_t cumulative(int landing, int source) const {
    check(landing, "landing");
    check(source, "source");
    return cumulative_[index(landing, source)];
  }

  /// Sum over iterations 1..t.
  std::uint64_t cumulative(int landing, int source, int t) const {
    if (t >= iterations()) return cumulative(landing, source);
    std::uint64_t s = 0;
    for (int m = 1; m <= t; ++m) s += count(landing, source, m);
    return s;
  }

  std::uint64_t column_total(int source, int t) const {
    std::uint64_t s = 0;
    for (int l = 1; l <= strata_; ++l) s += cumulative(l, source, t);
    return s;
  }

  void merge(const FrequencyTensor& delta) {
    if (delta.strata_ != strata_) throw std::invalid_argument("frequency tensor shape mismatch");
    for (int m = 1; m <= delta.iterations(); ++m) {
      for (int l = 1; l <= strata_; ++l) {
        for (int k = 1; k <= strata_; ++k) {
          if (auto n = delta.count(l, k, m)) record(l, k, m, n);
        }
      }
    }
  }

  /// Layer m as rows l, columns k.
  std::vector<std::vector<std::uint64_t>> layer(int iteration) const {
    std::vector<std::vector<std::uint64_t>> out(static_cast<std::size_t>(strata_),
                                                std::vector<std::uint64_t>(static_cast<std::size_t>(strata_)));
    for (int l = 1; l <= strata_; ++l) {
      for (int k = 1; k <= strata_; ++k) {
        out[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(k - 1)] = count(l, k, iteration);
      }
    }
    return out;
  }

 private:
  std::size_t cells() const { return static_cast<std::size_t>(strata_) * static_cast<std::size_t>(strata_); }
  std::size_t index(int l, int k) const {
    return static_cast<std::size_t>(l - 1) * static_cast<std::size_t>(strata_) + static_cast<std::size_t>(k - 1);
  }
  void check(int i, const char* what) const {
    if (i < 1 || i > strata_) {
      throw std::out_of_range(std::string(what) + " stratum " + std::to_string(i) + " outside 1.." +
                              std::to_string(strata_));
    }
  }
  void ensure_iteration(int m) {
    while (iterations() < m) layers_.emplace_back(cells(), 0);
  }

  int strata_;
  std::vector<std::vector<std::uint64_t>> layers_;
  std::vector<std::uint64_t> cumulative_;
};

/// Column-normalized cumulative frequencies C[l][k]. Columns without any
/// counts are unvisited and cannot be read.
class PredictiveMatrix {
 public:
  PredictiveMatrix(const FrequencyTensor& f, int t) : strata_(f.strata()), t_(t) {
    if (t < 1) throw std::invalid_argument("predictive matrix needs t >= 1");
    const auto n = static_cast<std::size_t>(strata_);
    probs_.assign(n * n, 0.0);
    totals_.assign(n, 0);
    for (int k = 1; k <= strata_; ++k) {
      const std::uint64_t total = f.column_total(k, t);
      totals_[static_cast<std::size_t>(k - 1)] = total;
      if (total == 0) continue;
      for (int l = 1; l <= strata_; ++l) {
        probs_[idx(l, k)] = static_cast<double>(f.cumulative(l, k, t)) / static_cast<double>(total);
      }
    }
  }

  int strata() const { return strata_; }
  int iteration() const { return t_; }
  bool visited(int k) const { return column_total(k) > 0; }
  std::uint64_t column_total(int k) const { return totals_.at(static_cast<std::size_t>(k - 1)); }

  double operator()(int l, int k) const {
    if (!visited(k)) throw std::logic_error("column " + std::to_string(k) + " of predictive matrix is unvisited");
    return probs_[idx(l, k)];
  }

  std::vector<double> column(int k) const {
    std::vector<double> c;
    for (int l = 1; l <= strata_; ++l) c.push_back((*this)(l, k));
    return c;
  }

 private:
  std::size_t idx(int l, int k) const {
    return static_cast<std::size_t>(l - 1) * static_cast<std::size_t>(strata_) + static_cast<std::size_t>(k - 1);
  }

  int strata_;
  int t_;
  std::vector<double> probs_;
  std::vector<std::uint64_t> totals_;
};

inline PredictiveMatrix predictive_matrix(const FrequencyTensor& f, int t) { return PredictiveMatrix(f, t); }

/// Mass of the current weights in each band, 1-based (entry 0 unused).
inline std::vector<double> stratum_masses(const Population& pop, std::span<const double> weights) {
  int hi = 1;
  for (const auto& p : pop.particles) hi = std::max(hi, p.stratum);
  std::vector<double> mass(static_cast<std::size_t>(hi) + 1, 0.0);
  for (std::size_t i = 0; i < pop.size(); ++i) mass[static_cast<std::size_t>(pop.particles[i].stratum)] += weights[i];
  return mass;
}

/// W_k = sum_{l=t+1..T} C[l][k] for k = t..T (1-based; entries below t are 0).
/// Unvisited columns take `fallback[k]` instead.
inline std::vector<double> strata_weights(const PredictiveMatrix& c, int t, std::span<const double> fallback = {}) {
  const int T = c.strata();
  if (t < 1 || t >= T) throw std::invalid_argument("strata weights need 1 <= t < T");
  std::vector<double> w(static_cast<std::size_t>(T) + 1, 0.0);
  for (int k = t; k <= T; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    if (c.visited(k)) {
      double s = 0.0;
      for (int l = t + 1; l <= T; ++l) s += c(l, k);
      w[ku] = s;
    } else {
      w[ku] = ku < fallback.size() ? fallback[ku] : 0.0;
    }
  }
  return w;
}

/// w^_i proportional to (w_i / mass of band I_i) * W_{I_i}, renormalized.
/// Identity when a single band is occupied or when every occupied band has
/// zero strata weight.
inline std::vector<double> reweight(const Population& pop, std::span<const double> strata_w) {
  const auto w = pop.weights();
  const auto mass = stratum_masses(pop, w);
  std::set<int> occupied;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    if (w[i] > 0.0) occupied.insert(pop.particles[i].stratum);
  }
  auto sw = [&](int k) {
    const auto ku = static_cast<std::size_t>(k);
    if (ku >= strata_w.size()) throw std::out_of_range("no strata weight for band " + std::to_string(k));
    return strata_w[ku];
  };
  if (occupied.size() <= 1) return w;
  bool any = false;
  for (int k : occupied) any = any || sw(k) > 0.0;
  if (!any) return w;

  std::vector<double> out(pop.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    const int k = pop.particles[i].stratum;
    const double m = mass[static_cast<std::size_t>(k)];
    if (m > 0.0) out[i] = w[i] / m * sw(k);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

/// sum_l p_l log(p_l / q_l); terms with p_l = 0 contribute nothing.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

/// Column k with every entry floored at 1/(column total + T), renormalized.
inline std::vector<double> floored_column(const PredictiveMatrix& c, int k) {
  const double floor = 1.0 / (static_cast<double>(c.column_total(k)) + static_cast<double>(c.strata()));
  std::vector<double> col = c.column(k);
  double total = 0.0;
  for (double& v : col) {
    v = std::max(v, floor);
    total += v;
  }
  for (double& v : col) v /= total;
  return col;
}

/// KL(C[:,T] || C[:,t]) on floored columns; nullopt while either column is
/// unvisited.
inline std::optional<double> kl_target_vs_current(const PredictiveMatrix& c, int t) {
  const int T = c.strata();
  if (t < 1 || t > T || !c.visited(T) || !c.visited(t)) return std::nullopt;
  const auto p = floored_column(c, T);
  const auto q = floored_column(c, t);
  return std::max(0.0, kl_divergence(p, q));
}

/// Diagnostic: KL(C^(t)[:,t] || C^(t-1)[:,t-1]) between successive
/// iterations' current-band columns.
inline std::optional<double> kl_consecutive(const PredictiveMatrix& now, const PredictiveMatrix& before) {
  const int t = now.iteration();
  if (t < 2 || !now.visited(t) || !before.visited(t - 1)) return std::nullopt;
  const auto p = floored_column(now, t);
  const auto q = floored_column(before, t - 1);
  return std::max(0.0, kl_divergence(p, q));
}

}  // namespace sdabc
