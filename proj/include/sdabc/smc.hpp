#pragma once

// Rejection ABC and the ABC-SMC loop shared by the four kernel policies,
// importance weights and the KL early-stopping rule.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "sdabc/core.hpp"
#include "sdabc/kernels.hpp"
#include "sdabc/models.hpp"
#include "sdabc/stratify.hpp"

namespace sdabc {

struct StopRule {
  bool enabled = false;
  double kl_threshold = 0.05;
  std::uint64_t min_count = 100;
};

struct SmcConfig {
  std::string model;
  ModelOptions model_options;
  ThresholdSchedule schedule;
  std::size_t particles = 1000;
  KernelPolicy policy = KernelPolicy::StratifiedFull;
  std::uint64_t seed = 1;
  StopRule stop;
  std::uint64_t max_proposals = 10'000'000;  // per iteration
  unsigned threads = 1;

  void validate() const {
    if (schedule.size() < 1) throw std::invalid_argument("schedule is empty");
    if (particles < 2) throw std::invalid_argument("particles must be >= 2");
    if (!(stop.kl_threshold > 0.0)) throw std::invalid_argument("stop KL threshold must be > 0");
    if (stop.min_count < 1) throw std::invalid_argument("stop minimum count must be >= 1");
    if (max_proposals < 1) throw std::invalid_argument("max proposals must be >= 1");
  }
};

struct IterationRecord {
  int iteration = 0;
  std::size_t accepted = 0;
  std::uint64_t generated = 0;
  double acceptance_rate = 0.0;
  std::vector<double> mean;
  std::vector<double> sd;
  double ess = 0.0;
  std::optional<double> kl_target;
  std::optional<double> kl_consecutive;
  std::uint64_t target_count = 0;  // cumulative column-T proposals
  double seconds = 0.0;
};

struct RunRecord {
  std::string model;
  KernelPolicy policy = KernelPolicy::StratifiedFull;
  std::uint64_t repetition = 0;
  std::vector<IterationRecord> iterations;
  bool stopped_early = false;
  bool aborted = false;
  std::string abort_reason;
  FrequencyTensor frequencies;
  Population final_population;
};

/// Raised when an iteration needs more proposals than allowed.
class ProposalCapExceeded : public std::runtime_error {
 public:
  ProposalCapExceeded(int iteration, std::uint64_t proposals, std::size_t accepted)
      : std::runtime_error("iteration " + std::to_string(iteration) + ": proposal cap of " +
                           std::to_string(proposals) + " reached with " + std::to_string(accepted) + " accepted"),
        iteration_(iteration),
        proposals_(proposals),
        accepted_(accepted) {}

  int iteration() const { return iteration_; }
  std::uint64_t proposals() const { return proposals_; }
  std::size_t accepted() const { return accepted_; }

 private:
  int iteration_;
  std::uint64_t proposals_;
  std::size_t accepted_;
};

/// Runs fn(i) for i in [0, n) over contiguous chunks on `threads` workers.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, n);
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
}

namespace detail {

/// Generates proposals p = 0, 1, ... in batches and hands them to `consume`
/// in index order until `target` are accepted. make(p) must depend on p
/// only, so the outcome is the same for any thread count and batch size.
template <class Make, class Consume>
std::uint64_t drive_proposals(std::size_t target, std::uint64_t cap, unsigned threads, int iteration, Make make,
                              Consume consume) {
  using Result = decltype(make(std::uint64_t{0}));
  std::uint64_t counted = 0;
  std::size_t accepted = 0;
  std::vector<Result> batch;
  while (accepted < target) {
    const std::size_t remaining = target - accepted;
    const double rate = counted > 0 && accepted > 0 ? static_cast<double>(accepted) / static_cast<double>(counted)
                                                    : 0.5;
    auto size = static_cast<std::size_t>(1.1 * static_cast<double>(remaining) / rate) + 16;
    size = std::clamp<std::size_t>(size, 32, 1u << 16);
    size = static_cast<std::size_t>(std::min<std::uint64_t>(size, cap - counted + 1));
    batch.assign(size, Result{});
    const std::uint64_t base = counted;
    parallel_for(size, threads, [&](std::size_t i) { batch[i] = make(base + i); });
    for (const Result& r : batch) {
      if (counted >= cap) throw ProposalCapExceeded(iteration, counted, accepted);
      ++counted;
      if (consume(r) && ++accepted == target) break;
    }
  }
  return counted;
}

struct Proposal {
  Vector theta;
  std::size_t parent = 0;
  double distance = kInfinity;
  bool in_support = false;
};

inline RngStream iteration_stream(const RngStream& rep, int iteration) {
  return tagged(rep, StreamTag::Iteration).child(static_cast<std::uint64_t>(iteration));
}

inline IterationRecord summarize(const Population& pop, int t, std::uint64_t generated) {
  IterationRecord rec;
  rec.iteration = t;
  rec.accepted = pop.size();
  rec.generated = generated;
  rec.acceptance_rate = static_cast<double>(pop.size()) / static_cast<double>(generated);
  auto [mean, sd] = weighted_moments(pop);
  rec.mean.assign(mean.data(), mean.data() + mean.size());
  rec.sd.assign(sd.data(), sd.data() + sd.size());
  rec.ess = effective_sample_size(pop.weights());
  return rec;
}

}  // namespace detail

struct RejectionResult {
  Population population;
  std::uint64_t generated = 0;
  bool complete = false;
};

/// Prior-proposal ABC with a fixed proposal budget: keeps draws with
/// distance < eps until `target` are accepted or `budget` proposals are
/// spent. Accepted particles carry equal weights and their band in `schedule`.
inline RejectionResult rejection_sample(const Model& model, const Vector& observed, const ThresholdSchedule& schedule,
                                        double eps, std::size_t target, std::uint64_t budget,
                                        const RngStream& stream, unsigned threads = 1) {
  RejectionResult out;
  out.population.iteration = 1;
  auto make = [&](std::uint64_t p) {
    Engine eng = stream.child(p).engine();
    detail::Proposal r;
    r.theta = model.prior_sample(eng);
    r.in_support = true;
    r.distance = model.discrepancy(r.theta, observed, eng);
    return r;
  };
  auto consume = [&](const detail::Proposal& r) {
    if (!(r.distance < eps)) return false;
    Particle part;
    part.theta = r.theta;
    part.distance = r.distance;
    part.stratum = schedule.stratum_of(r.distance).value_or(1);
    out.population.particles.push_back(std::move(part));
    return true;
  };
  try {
    out.generated = detail::drive_proposals(target, budget, threads, 1, make, consume);
    out.complete = true;
  } catch (const ProposalCapExceeded& e) {
    out.generated = e.proposals();
  }
  for (auto& p : out.population.particles) p.weight = 1.0 / static_cast<double>(out.population.size());
  return out;
}

/// Rejection ABC that must reach `n` acceptances.
inline RejectionResult rejection_abc(const Model& model, const Vector& observed, const ThresholdSchedule& schedule,
                                     double eps, std::size_t n, const RngStream& stream,
                                     std::uint64_t max_proposals = 10'000'000, unsigned threads = 1) {
  if (!(eps > 0.0)) throw std::invalid_argument("rejection_abc: eps must be positive");
  if (n < 1) throw std::invalid_argument("rejection_abc: need at least one particle");
  RejectionResult r = rejection_sample(model, observed, schedule, eps, n, max_proposals, stream, threads);
  if (!r.complete) throw ProposalCapExceeded(1, r.generated, r.population.size());
  return r;
}

/// Unnormalized importance weight p(theta') / q(theta') with q the kernel
/// mixture that generated theta'.
inline double importance_weight(const Model& model, const Vector& theta, const KernelPlan& plan) {
  const double prior = model.prior_density(theta);
  if (prior == 0.0) return 0.0;
  return prior / plan.mixture_density(theta);
}

/// Sampling weights for the transition out of iteration t: the reweighted
/// ones for StratifiedFull, the population weights otherwise.
inline std::vector<double> sampling_weights(KernelPolicy policy, const Population& pop, const FrequencyTensor& tensor,
                                            int t) {
  auto w = pop.weights();
  if (policy != KernelPolicy::StratifiedFull) return w;
  const PredictiveMatrix c = predictive_matrix(tensor, t);
  const auto fallback = stratum_masses(pop, w);
  std::vector<double> padded(static_cast<std::size_t>(c.strata()) + 1, 0.0);
  std::copy(fallback.begin(), fallback.end(), padded.begin());
  return reweight(pop, strata_weights(c, t, padded));
}

struct IterationOutput {
  Population population;
  IterationRecord record;
};

/// One transition t -> t+1: select by sampling weight, perturb with the
/// particle's own kernel, reject outside the prior box without simulating,
/// book the landing band against the parent's band, accept below eps_{t+1}.
inline IterationOutput smc_iteration(const Model& model, const Vector& observed, const Population& pop, int t,
                                     const SmcConfig& cfg, FrequencyTensor& tensor, const RngStream& rep_stream) {
  const auto& schedule = cfg.schedule;
  if (t < 1 || t >= schedule.size()) throw std::invalid_argument("smc_iteration: t must be in [1, T)");
  const auto started = std::chrono::steady_clock::now();
  const double eps_next = schedule.eps(t + 1);

  const auto weights = sampling_weights(cfg.policy, pop, tensor, t);
  const KernelPlan plan = build_kernel_plan(cfg.policy, pop, weights, schedule, t);
  const Box& box = model.prior_box();
  const RngStream stream = detail::iteration_stream(rep_stream, t + 1);

  auto make = [&](std::uint64_t p) {
    Engine eng = stream.child(p).engine();
    detail::Proposal r;
    r.parent = plan.select(eng);
    r.theta = plan.perturb(r.parent, pop.particles[r.parent].theta, eng);
    r.in_support = box.contains(r.theta);
    if (r.in_support) r.distance = model.discrepancy(r.theta, observed, eng);
    return r;
  };

  IterationOutput out;
  out.population.iteration = t + 1;
  auto consume = [&](const detail::Proposal& r) {
    const int landing = r.in_support ? schedule.landing_stratum(r.distance) : 1;
    tensor.record(landing, pop.particles[r.parent].stratum, t + 1);
    if (!r.in_support || !(r.distance < eps_next)) return false;
    Particle part;
    part.theta = r.theta;
    part.distance = r.distance;
    part.stratum = landing;
    out.population.particles.push_back(std::move(part));
    return true;
  };
  const std::uint64_t generated =
      detail::drive_proposals(cfg.particles, cfg.max_proposals, cfg.threads, t + 1, make, consume);

  auto& particles = out.population.particles;
  parallel_for(particles.size(), cfg.threads,
               [&](std::size_t i) { particles[i].weight = importance_weight(model, particles[i].theta, plan); });
  out.population.normalize();

  out.record = detail::summarize(out.population, t + 1, generated);
  out.record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

struct StopDecision {
  bool stop = false;
  std::optional<double> kl;
};

/// Stop at iteration t (>= 2) once the target column has min_count
/// proposals and KL(C[:,T] || C[:,t]) is below the threshold.
inline StopDecision should_stop(const FrequencyTensor& tensor, int t, const StopRule& rule) {
  StopDecision d;
  if (t < 2) return d;
  const PredictiveMatrix c = predictive_matrix(tensor, t);
  const int T = c.strata();
  if (c.column_total(T) < rule.min_count) return d;
  d.kl = kl_target_vs_current(c, t);
  d.stop = rule.enabled && d.kl && *d.kl < rule.kl_threshold;
  return d;
}

/// Full run on a given observation: iteration 1 is rejection ABC at eps_1,
/// then one transition per remaining threshold unless the stopping rule
/// fires. Proposal-cap aborts are recorded on the returned record.
inline RunRecord run(const Model& model, const Vector& observed, const SmcConfig& cfg, std::uint64_t repetition) {
  cfg.validate();
  const auto& schedule = cfg.schedule;
  const int T = schedule.size();
  const RngStream rep_stream = repetition_stream(cfg.seed, repetition);

  RunRecord rec;
  rec.model = std::string(model.name());
  rec.policy = cfg.policy;
  rec.repetition = repetition;
  rec.frequencies = FrequencyTensor(T);

  try {
    const auto started = std::chrono::steady_clock::now();
    RejectionResult first = rejection_abc(model, observed, schedule, schedule.eps(1), cfg.particles,
                                          detail::iteration_stream(rep_stream, 1), cfg.max_proposals, cfg.threads);
    Population pop = std::move(first.population);
    IterationRecord r1 = detail::summarize(pop, 1, first.generated);
    r1.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    rec.iterations.push_back(std::move(r1));

    std::optional<PredictiveMatrix> previous;
    for (int t = 1;; ++t) {
      IterationRecord& current = rec.iterations.back();
      if (t >= 2) {
        const PredictiveMatrix c = predictive_matrix(rec.frequencies, t);
        current.target_count = c.column_total(T);
        current.kl_target = kl_target_vs_current(c, t);
        if (previous) current.kl_consecutive = kl_consecutive(c, *previous);
        previous = c;
        if (t < T && should_stop(rec.frequencies, t, cfg.stop).stop) {
          rec.stopped_early = true;
          break;
        }
      } else {
        previous = predictive_matrix(rec.frequencies, 1);
      }
      if (t >= T) break;
      IterationOutput next = smc_iteration(model, observed, pop, t, cfg, rec.frequencies, rep_stream);
      pop = std::move(next.population);
      rec.iterations.push_back(std::move(next.record));
    }
    rec.final_population = std::move(pop);
  } catch (const ProposalCapExceeded& e) {
    rec.aborted = true;
    rec.abort_reason = e.what();
  }
  return rec;
}

/// Convenience overload: builds the model and draws the observation for
/// repetition 0 itself.
inline RunRecord run(const SmcConfig& cfg) {
  const auto model = make_model(cfg.model, cfg.model_options);
  const Vector observed = model->make_observed(tagged(repetition_stream(cfg.seed, 0), StreamTag::Observed));
  return run(*model, observed, cfg, 0);
}

}  // namespace sdabc
