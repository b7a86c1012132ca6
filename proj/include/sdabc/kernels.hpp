#pragma once

// Gaussian perturbation kernels: weighted covariance estimators for the
// global, local and stratified policies, regularization, and the
// multivariate normal sampler / mixture density used for importance weights.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sdabc/core.hpp"

namespace sdabc {

enum class KernelPolicy { Global, Local, StratifiedSimple, StratifiedFull };

inline constexpr std::string_view to_string(KernelPolicy p) {
  switch (p) {
    case KernelPolicy::Global: return "global";
    case KernelPolicy::Local: return "local";
    case KernelPolicy::StratifiedSimple: return "stratified-simple";
    case KernelPolicy::StratifiedFull: return "stratified";
  }
  return "?";
}

inline std::optional<KernelPolicy> parse_policy(std::string_view s) {
  for (auto p : {KernelPolicy::Global, KernelPolicy::Local, KernelPolicy::StratifiedSimple,
                 KernelPolicy::StratifiedFull}) {
    if (s == to_string(p)) return p;
  }
  return std::nullopt;
}

inline constexpr bool is_stratified(KernelPolicy p) {
  return p == KernelPolicy::StratifiedSimple || p == KernelPolicy::StratifiedFull;
}

/// Indices into a population with weights renormalized to sum to one.
struct WeightedSet {
  std::vector<std::size_t> indices;
  std::vector<double> weights;

  bool empty() const { return indices.empty(); }
  std::size_t size() const { return indices.size(); }
};

/// Members with positive weight that satisfy `keep`, renormalized. Empty if
/// nothing qualifies.
template <class Pred>
WeightedSet select_weighted(const Population& pop, std::span<const double> weights, Pred keep) {
  WeightedSet set;
  double total = 0.0;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    if (weights[i] > 0.0 && keep(pop.particles[i])) {
      set.indices.push_back(i);
      total += weights[i];
    }
  }
  if (!(total > 0.0)) return {};
  set.weights.reserve(set.indices.size());
  for (std::size_t i : set.indices) set.weights.push_back(weights[i] / total);
  return set;
}

inline WeightedSet whole_population(const Population& pop, std::span<const double> weights) {
  return select_weighted(pop, weights, [](const Particle&) { return true; });
}

/// Particles already inside the next acceptance region (distance < eps_next),
/// with the population weights renormalized over them.
inline WeightedSet next_threshold_subset(const Population& pop, double eps_next) {
  const auto w = pop.weights();
  return select_weighted(pop, w, [eps_next](const Particle& p) { return p.distance < eps_next; });
}

/// Weighted mean and second central moment of a set, plus the number of
/// distinct support points (counted only up to dim + 1).
struct SetMoments {
  Vector mean;
  Matrix cov;
  std::size_t distinct = 0;
};

inline std::size_t count_distinct(const Population& pop, const WeightedSet& set, std::size_t cap) {
  std::vector<const Vector*> seen;
  for (std::size_t i : set.indices) {
    const Vector& x = pop.particles[i].theta;
    bool dup = false;
    for (const Vector* s : seen) {
      if (*s == x) {
        dup = true;
        break;
      }
    }
    if (!dup) {
      seen.push_back(&x);
      if (seen.size() >= cap) break;
    }
  }
  return seen.size();
}

inline SetMoments moments(const Population& pop, const WeightedSet& set) {
  if (set.empty()) throw std::invalid_argument("moments of an empty set");
  const auto d = pop.dim();
  SetMoments m;
  m.mean = Vector::Zero(d);
  for (std::size_t j = 0; j < set.size(); ++j) m.mean += set.weights[j] * pop.particles[set.indices[j]].theta;
  m.cov = Matrix::Zero(d, d);
  for (std::size_t j = 0; j < set.size(); ++j) {
    const Vector c = pop.particles[set.indices[j]].theta - m.mean;
    m.cov.noalias() += set.weights[j] * c * c.transpose();
  }
  m.distinct = count_distinct(pop, set, static_cast<std::size_t>(d) + 1);
  return m;
}

/// sum_i w_i sum_j w~_j (theta_i - theta_j)(theta_i - theta_j)^T with i over
/// the whole population and j over `subset`. Evaluated through moments:
/// Cov_w + Cov_w~ + (mu_w - mu_w~)(mu_w - mu_w~)^T.
inline Matrix global_covariance(const Population& pop, const WeightedSet& subset) {
  if (subset.empty()) throw std::invalid_argument("global_covariance: empty subset");
  const auto w = pop.weights();
  const SetMoments outer = moments(pop, whole_population(pop, w));
  const SetMoments inner = moments(pop, subset);
  const Vector shift = outer.mean - inner.mean;
  return outer.cov + inner.cov + shift * shift.transpose();
}

/// sum_j w~_j (theta_i - theta_j)(theta_i - theta_j)^T over a set with the
/// given moments.
inline Matrix local_covariance(const Vector& theta_i, const SetMoments& target) {
  const Vector shift = theta_i - target.mean;
  return target.cov + shift * shift.transpose();
}

inline Matrix local_covariance(const Vector& theta_i, const Population& pop, const WeightedSet& subset) {
  return local_covariance(theta_i, moments(pop, subset));
}

/// Per-stratum kernel targets: for a particle in band k the target set is
/// {stratum >= k+1}; if that is empty fall back to {stratum >= k}, then to the
/// whole population.
class StratifiedTargets {
 public:
  StratifiedTargets(const Population& pop, std::span<const double> weights, int strata) : targets_(strata) {
    std::optional<SetMoments> whole;
    auto whole_moments = [&]() -> const SetMoments& {
      if (!whole) whole = moments(pop, whole_population(pop, weights));
      return *whole;
    };
    // inner[k] = moments of {stratum >= k}; nullopt when empty.
    std::vector<std::optional<SetMoments>> inner(static_cast<std::size_t>(strata) + 2);
    for (int k = 1; k <= strata; ++k) {
      WeightedSet s = select_weighted(pop, weights, [k](const Particle& p) { return p.stratum >= k; });
      if (!s.empty()) inner[static_cast<std::size_t>(k)] = moments(pop, s);
    }
    for (int k = 1; k <= strata; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      if (inner[ku + 1]) {
        targets_[ku - 1] = *inner[ku + 1];
      } else if (inner[ku]) {
        targets_[ku - 1] = *inner[ku];
      } else {
        targets_[ku - 1] = whole_moments();
      }
    }
  }

  const SetMoments& for_stratum(int k) const { return targets_.at(static_cast<std::size_t>(k - 1)); }

 private:
  std::vector<SetMoments> targets_;
};

inline Matrix stratified_covariance(const Vector& theta_i, int stratum, const Population& pop,
                                    std::span<const double> weights, int strata) {
  return local_covariance(theta_i, StratifiedTargets(pop, weights, strata).for_stratum(stratum));
}

/// Adds lambda*I, lambda = max(1e-8, 1e-6 * trace / dim), when the matrix is
/// not Cholesky-factorizable or its support has fewer than dim+1 distinct
/// points. Jitter is grown if the first attempt still fails.
inline Matrix regularize(const Matrix& sigma, std::size_t support_distinct) {
  const auto d = sigma.rows();
  const bool degenerate_support = support_distinct < static_cast<std::size_t>(d) + 1;
  Eigen::LLT<Matrix> llt(sigma);
  if (!degenerate_support && llt.info() == Eigen::Success) return sigma;
  const double trace = sigma.trace();
  double lambda = std::max(1e-8, 1e-6 * (std::isfinite(trace) ? trace : 0.0) / static_cast<double>(d));
  Matrix out = sigma + lambda * Matrix::Identity(d, d);
  for (int attempt = 0; attempt < 60; ++attempt) {
    if (Eigen::LLT<Matrix>(out).info() == Eigen::Success) return out;
    lambda *= 10.0;
    out = sigma + lambda * Matrix::Identity(d, d);
  }
  throw std::runtime_error("regularize: covariance could not be made positive definite");
}

/// Cholesky factor of a kernel covariance with its inverse and the log of
/// the normalizing constant cached for density evaluation.
struct KernelFactor {
  Matrix lower;
  std::vector<double> inv_lower;  // packed row-major lower triangle of L^{-1}
  double log_norm = 0.0;

  static KernelFactor from_covariance(const Matrix& sigma) {
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success) throw std::runtime_error("kernel covariance is not positive definite");
    KernelFactor f;
    f.lower = llt.matrixL();
    const auto d = sigma.rows();
    const Matrix inv = f.lower.triangularView<Eigen::Lower>().solve(Matrix::Identity(d, d));
    f.inv_lower.reserve(static_cast<std::size_t>(d * (d + 1) / 2));
    for (Eigen::Index r = 0; r < d; ++r) {
      for (Eigen::Index c = 0; c <= r; ++c) f.inv_lower.push_back(inv(r, c));
    }
    f.log_norm = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) -
                 f.lower.diagonal().array().log().sum();
    return f;
  }

  Eigen::Index dim() const { return lower.rows(); }

  /// log N(x | center, Sigma) for raw coordinate arrays.
  double log_density(const double* x, const double* center) const {
    const auto d = static_cast<std::size_t>(dim());
    double quad = 0.0;
    std::size_t pos = 0;
    for (std::size_t r = 0; r < d; ++r) {
      double z = 0.0;
      for (std::size_t c = 0; c <= r; ++c) z += inv_lower[pos++] * (x[c] - center[c]);
      quad += z * z;
    }
    return log_norm - 0.5 * quad;
  }
};

inline Vector sample_kernel(const Vector& theta, const KernelFactor& f, Engine& eng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(theta.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(eng);
  return theta + f.lower.triangularView<Eigen::Lower>() * z;
}

inline double kernel_density(const Vector& x, const Vector& center, const KernelFactor& f) {
  return std::exp(f.log_density(x.data(), center.data()));
}

inline double kernel_density(const Vector& x, const Vector& center, const Matrix& sigma) {
  return kernel_density(x, center, KernelFactor::from_covariance(sigma));
}

/// Mixture proposal sum_j s_j N(. | theta_j, Sigma_j): mixture weights s are
/// the sampling weights, each component carries its own factor.
class KernelPlan {
 public:
  KernelPlan() = default;

  KernelPlan(const Population& pop, std::vector<double> sampling_weights, std::vector<KernelFactor> factors,
             std::vector<std::uint32_t> factor_of)
      : dim_(pop.dim()),
        mix_(std::move(sampling_weights)),
        factors_(std::move(factors)),
        factor_of_(std::move(factor_of)) {
    const auto d = static_cast<std::size_t>(dim_);
    centers_.resize(pop.size() * d);
    for (std::size_t j = 0; j < pop.size(); ++j) {
      for (std::size_t c = 0; c < d; ++c) centers_[j * d + c] = pop.particles[j].theta[static_cast<Eigen::Index>(c)];
    }
    cumulative_.resize(mix_.size());
    double acc = 0.0;
    for (std::size_t j = 0; j < mix_.size(); ++j) cumulative_[j] = (acc += mix_[j]);
  }

  std::size_t size() const { return mix_.size(); }
  Eigen::Index dim() const { return dim_; }
  const std::vector<double>& mixture_weights() const { return mix_; }
  const KernelFactor& factor(std::size_t j) const { return factors_[factor_of_[j]]; }
  Matrix covariance(std::size_t j) const {
    const Matrix& l = factor(j).lower;
    return l * l.transpose();
  }

  /// Index j drawn with probability s_j.
  std::size_t select(Engine& eng) const {
    std::uniform_real_distribution<double> unif(0.0, cumulative_.back());
    const double u = unif(eng);
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    std::size_t j = static_cast<std::size_t>(it - cumulative_.begin());
    if (j >= mix_.size()) j = mix_.size() - 1;
    while (mix_[j] <= 0.0 && j > 0) --j;  // u at a boundary of a zero-mass run
    return j;
  }

  Vector perturb(std::size_t j, const Vector& theta, Engine& eng) const { return sample_kernel(theta, factor(j), eng); }

  double mixture_density(const Vector& x) const {
    const auto d = static_cast<std::size_t>(dim_);
    double total = 0.0;
    for (std::size_t j = 0; j < mix_.size(); ++j) {
      if (mix_[j] <= 0.0) continue;
      total += mix_[j] * std::exp(factor(j).log_density(x.data(), &centers_[j * d]));
    }
    if (total > 0.0) return total;
    return std::exp(log_mixture_density(x));
  }

  double log_mixture_density(const Vector& x) const {
    const auto d = static_cast<std::size_t>(dim_);
    std::vector<double> terms;
    terms.reserve(mix_.size());
    double hi = -kInfinity;
    for (std::size_t j = 0; j < mix_.size(); ++j) {
      if (mix_[j] <= 0.0) continue;
      const double v = std::log(mix_[j]) + factor(j).log_density(x.data(), &centers_[j * d]);
      terms.push_back(v);
      hi = std::max(hi, v);
    }
    double s = 0.0;
    for (double v : terms) s += std::exp(v - hi);
    return hi + std::log(s);
  }

 private:
  Eigen::Index dim_ = 0;
  std::vector<double> mix_;
  std::vector<double> cumulative_;
  std::vector<double> centers_;
  std::vector<KernelFactor> factors_;
  std::vector<std::uint32_t> factor_of_;
};

/// Builds the perturbation kernels of one policy. `weights` are the sampling
/// weights (population weights, or the reweighted ones for StratifiedFull);
/// they double as the covariance weights for the stratified policies.
inline KernelPlan build_kernel_plan(KernelPolicy policy, const Population& pop, std::span<const double> weights,
                                    const ThresholdSchedule& schedule, int t) {
  const std::size_t n = pop.size();
  const double eps_next = schedule.eps(t + 1);
  std::vector<KernelFactor> factors;
  std::vector<std::uint32_t> factor_of(n, 0);

  auto add_factor = [&](const Matrix& sigma, std::size_t distinct) {
    factors.push_back(KernelFactor::from_covariance(regularize(sigma, distinct)));
    return static_cast<std::uint32_t>(factors.size() - 1);
  };

  switch (policy) {
    case KernelPolicy::Global: {
      const WeightedSet subset = next_threshold_subset(pop, eps_next);
      if (!subset.empty()) {
        const auto w = pop.weights();
        const std::size_t distinct =
            std::max(count_distinct(pop, subset, static_cast<std::size_t>(pop.dim()) + 1),
                     count_distinct(pop, whole_population(pop, w), static_cast<std::size_t>(pop.dim()) + 1));
        add_factor(global_covariance(pop, subset), distinct);
      } else {
        const auto w = pop.weights();
        const SetMoments all = moments(pop, whole_population(pop, w));
        add_factor(2.0 * all.cov, all.distinct);
      }
      break;
    }
    case KernelPolicy::Local: {
      WeightedSet subset = next_threshold_subset(pop, eps_next);
      if (subset.empty()) {
        const auto w = pop.weights();
        subset = whole_population(pop, w);
      }
      const SetMoments target = moments(pop, subset);
      for (std::size_t i = 0; i < n; ++i) {
        factor_of[i] = add_factor(local_covariance(pop.particles[i].theta, target), target.distinct);
      }
      break;
    }
    case KernelPolicy::StratifiedSimple:
    case KernelPolicy::StratifiedFull: {
      const StratifiedTargets targets(pop, weights, schedule.size());
      for (std::size_t i = 0; i < n; ++i) {
        const SetMoments& target = targets.for_stratum(pop.particles[i].stratum);
        factor_of[i] = add_factor(local_covariance(pop.particles[i].theta, target), target.distinct);
      }
      break;
    }
  }
  return KernelPlan(pop, std::vector<double>(weights.begin(), weights.end()), std::move(factors),
                    std::move(factor_of));
}

}  // namespace sdabc
