#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "sdabc/kernels.hpp"

using namespace sdabc;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Particle make(double x, double w, double d = 0.0, int stratum = 1) { return {Vector::Constant(1, x), w, d, stratum}; }

Particle make2(double x, double y, double w, double d = 0.0, int stratum = 1) {
  return {(Vector(2) << x, y).finished(), w, d, stratum};
}

}  // namespace

TEST_CASE("next_threshold_subset", "[kernels]") {
  Population pop;
  pop.particles = {make(0, 1.0 / 3, 0.5), make(1, 1.0 / 3, 1.5), make(2, 1.0 / 3, 3.0)};
  const auto s = next_threshold_subset(pop, 2.0);
  REQUIRE(s.size() == 2);
  CHECK(s.indices == std::vector<std::size_t>{0, 1});
  CHECK_THAT(s.weights[0], WithinAbs(0.5, 1e-15));
  CHECK_THAT(s.weights[1], WithinAbs(0.5, 1e-15));

  const auto all = next_threshold_subset(pop, 10.0);
  CHECK(all.size() == 3);
  CHECK(next_threshold_subset(pop, 0.1).empty());
}

TEST_CASE("global covariance examples", "[kernels]") {
  Population pop;
  pop.particles = {make(0, 0.5, 0.1), make(1, 0.5, 0.1)};
  const auto subset = next_threshold_subset(pop, 1.0);
  CHECK_THAT(global_covariance(pop, subset)(0, 0), WithinAbs(0.5, 1e-15));

  Population single;
  single.particles = {make(3, 1.0, 0.1)};
  CHECK(global_covariance(single, next_threshold_subset(single, 1.0))(0, 0) == 0.0);
  CHECK_THROWS(global_covariance(single, WeightedSet{}));
}

TEST_CASE("local covariance examples", "[kernels]") {
  Population pop;
  pop.particles = {make(0, 0.5, 0.1), make(1, 0.5, 0.1)};
  const auto subset = next_threshold_subset(pop, 1.0);
  CHECK_THAT(local_covariance(Vector::Zero(1), pop, subset)(0, 0), WithinAbs(0.5, 1e-15));

  Population one;
  one.particles = {make(2, 1.0, 0.1)};
  CHECK(local_covariance(Vector::Constant(1, 2.0), one, next_threshold_subset(one, 1.0))(0, 0) == 0.0);

  Population p2;
  p2.particles = {make2(1, 0, 1.0, 0.1)};
  const Matrix s = local_covariance(Vector::Zero(2), p2, next_threshold_subset(p2, 1.0));
  CHECK(s == (Matrix(2, 2) << 1, 0, 0, 0).finished());
}

TEST_CASE("stratified covariance examples", "[kernels]") {
  const auto sched = ThresholdSchedule::validate({kInfinity, 4, 2});
  Population pop;
  // theta_i = 1 in band 2, band 3 holds theta = 5.
  pop.particles = {make(1, 0.5, 3.0, 2), make(5, 0.5, 1.0, 3)};
  const auto w = pop.weights();
  CHECK_THAT(stratified_covariance(Vector::Constant(1, 1.0), 2, pop, w, 3)(0, 0), WithinAbs(16.0, 1e-12));

  // Innermost band: {>= T+1} is empty, falls back to band T only.
  CHECK_THAT(stratified_covariance(Vector::Constant(1, 5.0), 3, pop, w, 3)(0, 0), WithinAbs(0.0, 1e-15));

  // Single-band schedule reduces to the local estimator on the whole population.
  const auto one = ThresholdSchedule::validate({kInfinity});
  Population q;
  q.particles = {make(0, 0.25, 1, 1), make(2, 0.75, 2, 1)};
  const auto wq = q.weights();
  const Matrix strat = stratified_covariance(Vector::Constant(1, 0.5), 1, q, wq, one.size());
  const Matrix local = local_covariance(Vector::Constant(1, 0.5), q, whole_population(q, wq));
  CHECK(strat == local);
}

TEST_CASE("stratified fallback chain reaches the whole population", "[kernels]") {
  Population pop;
  // Every particle has zero reweighted mass in bands >= 2.
  pop.particles = {make(0, 0.5, 5.0, 1), make(4, 0.5, 5.0, 1), make(9, 0.0, 0.1, 3)};
  const std::vector<double> w{0.5, 0.5, 0.0};
  const StratifiedTargets t(pop, w, 3);
  CHECK_THAT(t.for_stratum(3).mean[0], WithinAbs(2.0, 1e-15));
  CHECK_THAT(t.for_stratum(1).mean[0], WithinAbs(2.0, 1e-15));
}

TEST_CASE("covariance estimators match brute-force loops", "[kernels][property][oracle]") {
  std::mt19937_64 gen(1234);
  const auto sched = ThresholdSchedule::validate({kInfinity, 3, 2, 1});
  std::uniform_int_distribution<int> dim_dist(1, 4), n_dist(1, 50);
  for (int trial = 0; trial < 100; ++trial) {
    const int dim = dim_dist(gen);
    const auto n = static_cast<std::size_t>(n_dist(gen));
    const Population pop = oracle::random_population(gen, dim, n, sched, 4.0);
    const auto w = pop.weights();
    std::vector<Vector> thetas;
    for (const auto& p : pop.particles) thetas.push_back(p.theta);

    // Global and local against the eps = 2 subset.
    const auto subset = next_threshold_subset(pop, 2.0);
    if (!subset.empty()) {
      std::vector<Vector> sub;
      std::vector<double> sw;
      for (std::size_t i : subset.indices) {
        sub.push_back(pop.particles[i].theta);
        sw.push_back(pop.particles[i].weight);
      }
      sw = oracle::normalized(sw);
      const Matrix g = global_covariance(pop, subset);
      CHECK((g - oracle::brute_global(thetas, w, sub, sw)).cwiseAbs().maxCoeff() < 1e-12);
      const Matrix l = local_covariance(thetas[0], pop, subset);
      CHECK((l - oracle::brute_local(thetas[0], sub, sw)).cwiseAbs().maxCoeff() < 1e-12);
    }

    // Stratified, for each particle against {stratum >= k+1} when non-empty.
    const StratifiedTargets targets(pop, w, sched.size());
    for (std::size_t i = 0; i < pop.size(); ++i) {
      const int k = pop.particles[i].stratum;
      std::vector<Vector> tgt;
      std::vector<double> tw;
      for (int lo : {k + 1, k}) {
        for (const auto& p : pop.particles) {
          if (p.stratum >= lo) {
            tgt.push_back(p.theta);
            tw.push_back(p.weight);
          }
        }
        if (!tgt.empty()) break;
      }
      const Matrix s = local_covariance(pop.particles[i].theta, targets.for_stratum(k));
      CHECK((s - oracle::brute_local(pop.particles[i].theta, tgt, oracle::normalized(tw))).cwiseAbs().maxCoeff() <
            1e-12);
    }
  }
}

TEST_CASE("covariance estimators are translation invariant", "[kernels][property]") {
  std::mt19937_64 gen(99);
  const auto sched = ThresholdSchedule::validate({kInfinity, 3, 2, 1});
  for (int trial = 0; trial < 30; ++trial) {
    Population pop = oracle::random_population(gen, 3, 40, sched, 4.0);
    Population shifted = pop;
    const Vector c = Vector::Constant(3, 0.75);
    for (auto& p : shifted.particles) p.theta += c;
    const auto s1 = next_threshold_subset(pop, 2.0), s2 = next_threshold_subset(shifted, 2.0);
    if (s1.empty()) continue;
    CHECK((global_covariance(pop, s1) - global_covariance(shifted, s2)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((local_covariance(pop.particles[0].theta, pop, s1) -
           local_covariance(shifted.particles[0].theta, shifted, s2))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
    const auto w = pop.weights();
    CHECK((stratified_covariance(pop.particles[1].theta, pop.particles[1].stratum, pop, w, 4) -
           stratified_covariance(shifted.particles[1].theta, shifted.particles[1].stratum, shifted, w, 4))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }
}

TEST_CASE("regularize", "[kernels]") {
  CHECK(regularize(Matrix::Zero(1, 1), 1)(0, 0) == 1e-8);

  const Matrix good = (Matrix(2, 2) << 2, 0.3, 0.3, 1).finished();
  CHECK(regularize(good, 10) == good);

  const Matrix rank1 = (Matrix(2, 2) << 1, 0, 0, 0).finished();
  CHECK(Eigen::LLT<Matrix>(rank1).info() != Eigen::Success);
  const Matrix fixed = regularize(rank1, 1);
  CHECK(Eigen::LLT<Matrix>(fixed).info() == Eigen::Success);
  CHECK_THAT(fixed(1, 1), WithinAbs(5e-7, 1e-20));  // max(1e-8, 1e-6 * 1 / 2)

  // Too few distinct support points triggers jitter even when factorizable.
  const Matrix big = (Matrix(2, 2) << 4e4, 0, 0, 4e4).finished();
  CHECK_THAT(regularize(big, 2)(0, 0), WithinAbs(4e4 + 0.04, 1e-9));
}

TEST_CASE("regularize always yields a factorizable matrix", "[kernels][property]") {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 1 + trial % 4;
    Matrix a(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) a(i, j) = n(gen);
    // Rank-deficient PSD.
    Matrix s = a.leftCols(std::max(1, d - 1)) * a.leftCols(std::max(1, d - 1)).transpose();
    CHECK(Eigen::LLT<Matrix>(regularize(s, 1)).info() == Eigen::Success);
  }
}

TEST_CASE("kernel density closed forms", "[kernels]") {
  const Matrix one = Matrix::Identity(1, 1);
  CHECK_THAT(kernel_density(Vector::Zero(1), Vector::Zero(1), one), WithinAbs(1.0 / std::sqrt(2 * std::numbers::pi), 1e-15));
  CHECK_THAT(kernel_density(Vector::Constant(1, 1.0), Vector::Zero(1), one), WithinAbs(0.24197072451914337, 1e-15));

  // 2-D correlated against the textbook formula.
  const Matrix s = (Matrix(2, 2) << 2, 0.6, 0.6, 1).finished();
  const Vector x = (Vector(2) << 0.3, -1.1).finished(), mu = (Vector(2) << -0.2, 0.4).finished();
  const Vector dx = x - mu;
  const double expected =
      std::exp(-0.5 * dx.dot(s.inverse() * dx)) / (2 * std::numbers::pi * std::sqrt(s.determinant()));
  CHECK_THAT(kernel_density(x, mu, s), WithinRel(expected, 1e-12));
}

TEST_CASE("kernel density integrates to one", "[kernels][oracle]") {
  const Matrix s = Matrix::Constant(1, 1, 0.7);
  const auto f = KernelFactor::from_covariance(s);
  const Vector mu = Vector::Constant(1, 0.4);
  const double total = oracle::simpson(
      [&](double x) { return kernel_density(Vector::Constant(1, x), mu, f); }, -12.0, 12.0, 20000);
  CHECK_THAT(total, WithinAbs(1.0, 1e-6));
}

TEST_CASE("sample_kernel moments", "[kernels][oracle]") {
  const Matrix s = (Matrix(2, 2) << 1.5, -0.4, -0.4, 0.8).finished();
  const auto f = KernelFactor::from_covariance(s);
  const Vector theta = (Vector(2) << 1.0, -2.0).finished();
  Engine e = RngStream(77).engine();
  const int draws = 100000;
  Vector sum = Vector::Zero(2);
  Matrix sq = Matrix::Zero(2, 2);
  for (int i = 0; i < draws; ++i) {
    const Vector x = sample_kernel(theta, f, e) - theta;
    sum += x;
    sq += x * x.transpose();
  }
  const Vector mean = sum / draws;
  for (int c = 0; c < 2; ++c) {
    CHECK(std::abs(mean[c]) < 4 * std::sqrt(s(c, c) / draws));
  }
  const Matrix cov = sq / draws - mean * mean.transpose();
  CHECK_THAT(cov(0, 0), WithinRel(1.5, 0.05));
  CHECK_THAT(cov(1, 1), WithinRel(0.8, 0.05));
  CHECK_THAT(cov(0, 1), WithinRel(-0.4, 0.05));

  // Floor-level covariance leaves theta essentially unchanged.
  const auto tiny = KernelFactor::from_covariance(regularize(Matrix::Zero(2, 2), 1));
  CHECK((sample_kernel(theta, tiny, e) - theta).norm() < 1e-3);
}

TEST_CASE("sampled log-density matches Gaussian entropy", "[kernels][oracle]") {
  for (int d : {1, 2}) {
    const Matrix s = d == 1 ? Matrix::Constant(1, 1, 2.0) : (Matrix(2, 2) << 1.0, 0.3, 0.3, 0.5).finished();
    const auto f = KernelFactor::from_covariance(s);
    const Vector mu = Vector::Zero(d);
    Engine e = RngStream(200 + d).engine();
    double acc = 0.0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) acc -= std::log(kernel_density(sample_kernel(mu, f, e), mu, f));
    const double entropy = 0.5 * d * (1 + std::log(2 * std::numbers::pi)) + 0.5 * std::log(s.determinant());
    CHECK_THAT(acc / draws, WithinRel(entropy, 0.02));
  }
}

TEST_CASE("kernel plan mixture density and selection", "[kernels]") {
  const auto sched = ThresholdSchedule::validate({kInfinity, 2, 1});
  Population pop;
  pop.particles = {make(-1, 0.25, 0.5, 3), make(2, 0.75, 1.5, 2)};
  const auto w = pop.weights();
  const KernelPlan plan = build_kernel_plan(KernelPolicy::Local, pop, w, sched, 1);
  const Vector x = Vector::Constant(1, 0.3);
  double expected = 0.0;
  for (std::size_t j = 0; j < 2; ++j) {
    expected += w[j] * kernel_density(x, pop.particles[j].theta, plan.covariance(j));
  }
  CHECK_THAT(plan.mixture_density(x), WithinRel(expected, 1e-12));
  CHECK_THAT(std::exp(plan.log_mixture_density(x)), WithinRel(expected, 1e-12));

  Engine e = RngStream(1).engine();
  int first = 0;
  for (int i = 0; i < 40000; ++i) first += plan.select(e) == 0;
  CHECK_THAT(first / 40000.0, WithinAbs(0.25, 0.01));

  const std::vector<double> skewed{0.0, 1.0};
  const KernelPlan p2 = build_kernel_plan(KernelPolicy::Local, pop, skewed, sched, 1);
  for (int i = 0; i < 1000; ++i) REQUIRE(p2.select(e) == 1);
}

TEST_CASE("global plan shares one covariance and falls back when the subset is empty", "[kernels]") {
  const auto sched = ThresholdSchedule::validate({kInfinity, 2, 1});
  Population pop;
  pop.particles = {make(0, 0.5, 5.0, 1), make(2, 0.5, 6.0, 1)};
  const auto w = pop.weights();
  const KernelPlan plan = build_kernel_plan(KernelPolicy::Global, pop, w, sched, 1);
  CHECK_THAT(plan.covariance(0)(0, 0), WithinAbs(2.0, 1e-12));  // 2 * weighted variance (1)
  CHECK(plan.covariance(0) == plan.covariance(1));
}

TEST_CASE("policy names round trip", "[kernels]") {
  for (auto p : {KernelPolicy::Global, KernelPolicy::Local, KernelPolicy::StratifiedSimple,
                 KernelPolicy::StratifiedFull}) {
    CHECK(parse_policy(to_string(p)) == p);
  }
  CHECK_FALSE(parse_policy("adaptive").has_value());
}
