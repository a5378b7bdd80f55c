#include <doctest.h>

#include <cmath>
#include <numbers>

#include "aif/error.hpp"
#include "aif/gaussian.hpp"
#include "generators.hpp"

using namespace aif;
using aif::testing::Gen;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// Independent density oracle: probability mass of a tiny box around x from
// the normal CDF, divided by the box volume.
double box_log_density(std::span<const double> x, std::span<const double> mean, std::span<const double> var) {
  const double h = 1e-4;
  double log_mass = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = std::sqrt(2.0 * var[i]);
    const double p = 0.5 * (std::erf((x[i] + h - mean[i]) / s) - std::erf((x[i] - h - mean[i]) / s));
    log_mass += std::log(p / (2.0 * h));
  }
  return log_mass;
}

double scalar_log_density(double x, double mean, double var) {
  return -0.5 * (kLog2Pi + std::log(var) + (x - mean) * (x - mean) / var);
}

}  // namespace

TEST_CASE("gaussian construction floors variance and rejects bad input") {
  DiagonalGaussian g({0.0, 1.0}, {0.0, 2.0});
  CHECK(g.variance()[0] == kVarianceFloor);
  CHECK(g.variance()[1] == 2.0);
  CHECK_THROWS_AS(DiagonalGaussian({0.0}, {1.0, 1.0}), ContractViolation);
  CHECK_THROWS_AS(DiagonalGaussian({NAN}, {1.0}), ContractViolation);
  CHECK_THROWS_AS(DiagonalGaussian({0.0}, {INFINITY}), ContractViolation);
}

TEST_CASE("log_prob closed forms") {
  CHECK(log_prob(std::vector<double>{0.0}, DiagonalGaussian({0.0}, {1.0})) ==
        doctest::Approx(-0.9189385332046727).epsilon(1e-12));

  Gen gen(11);
  for (int trial = 0; trial < 50; ++trial) {
    const DiagonalGaussian g = gen.gaussian(static_cast<std::size_t>(gen.integer(1, 5)));
    double expected = 0.0;
    for (double v : g.variance()) expected += -0.5 * std::log(2.0 * std::numbers::pi * v);
    CHECK(std::abs(log_prob(g.mean(), g) - expected) < 1e-9);
  }
}

TEST_CASE("log_prob matches CDF box oracle") {
  const std::vector<double> x{1.0, -1.0};
  const DiagonalGaussian g({0.0, 0.0}, {1.0, 4.0});
  const double oracle = box_log_density(x, g.mean(), g.variance());
  CHECK(std::abs(log_prob(x, g) - oracle) < 1e-6);
  // Frozen from the oracle above.
  CHECK(std::abs(log_prob(x, g) - (-3.1560242470)) < 1e-9);
  CHECK_THROWS_AS(log_prob(std::vector<double>{1.0}, g), ContractViolation);
}

TEST_CASE("kl closed forms") {
  const DiagonalGaussian std1({0.0}, {1.0});
  CHECK(kl_divergence(std1, std1) == 0.0);
  CHECK(std::abs(kl_divergence(DiagonalGaussian({1.0}, {1.0}), std1) - 0.5) < 1e-12);
  CHECK(std::abs(kl_divergence(DiagonalGaussian({0.0}, {4.0}), std1) - 0.8068528194400546) < 1e-9);
}

TEST_CASE("kl matches Monte-Carlo oracle at 1e6 samples") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n = 1000000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = 2.0 * normal(rng);
    const double d = scalar_log_density(x, 0.0, 4.0) - scalar_log_density(x, 0.0, 1.0);
    sum += d;
    sum_sq += d * d;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum_sq / n - mean * mean) / n);
  const double kl = kl_divergence(DiagonalGaussian({0.0}, {4.0}), DiagonalGaussian({0.0}, {1.0}));
  CHECK(std::abs(mean - kl) < 3.0 * se);
  CHECK(std::abs(mean - kl) < 1e-2);
}

TEST_CASE("entropy closed forms and Monte-Carlo oracle") {
  CHECK(std::abs(entropy(DiagonalGaussian({0.0, 0.0}, {1.0, 1.0})) - 2.8378770664093453) < 1e-9);
  const double e2 = std::exp(2.0);
  CHECK(std::abs(entropy(DiagonalGaussian({0.0}, {e2})) - (0.5 * (1.0 + kLog2Pi) + 1.0)) < 1e-9);

  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n = 1000000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = 3.0 + 0.5 * normal(rng);
    const double v = -scalar_log_density(x, 3.0, 0.25);
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum_sq / n - mean * mean) / n);
  const double h = entropy(DiagonalGaussian({3.0}, {0.25}));
  CHECK(std::abs(mean - h) < 3.0 * se);
  CHECK(std::abs(mean - h) < 1e-2);
}

TEST_CASE("property: kl is non-negative, zero on identity, entropy ignores the mean") {
  Gen gen(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = static_cast<std::size_t>(gen.integer(1, 6));
    const DiagonalGaussian q = gen.gaussian(d);
    const DiagonalGaussian p = gen.gaussian(d);
    CHECK(kl_divergence(q, p) >= 0.0);
    CHECK(std::abs(kl_divergence(q, q)) < 1e-12);
    const DiagonalGaussian shifted(gen.vector(d, -5.0, 5.0), q.variance());
    CHECK(std::abs(entropy(shifted) - entropy(q)) < 1e-12);
  }
}

TEST_CASE("reparam_sample") {
  const DiagonalGaussian g({1.5, -2.0}, {0.3, 2.0});
  CHECK(reparam_sample(g, std::vector<double>{0.0, 0.0}) == g.mean());
  CHECK(reparam_sample(DiagonalGaussian({0.0}, {1.0}), std::vector<double>{2.0})[0] == 2.0);
  CHECK_THROWS_AS(reparam_sample(g, std::vector<double>{0.0}), ContractViolation);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n = 100000;
  std::vector<double> sum(2, 0.0), sum_sq(2, 0.0);
  for (int i = 0; i < n; ++i) {
    const std::vector<double> noise{normal(rng), normal(rng)};
    const std::vector<double> s = reparam_sample(g, noise);
    for (int k = 0; k < 2; ++k) {
      sum[k] += s[k];
      sum_sq[k] += s[k] * s[k];
    }
  }
  for (int k = 0; k < 2; ++k) {
    const double m = sum[k] / n;
    const double v = sum_sq[k] / n - m * m;
    const double var = g.variance()[k];
    CHECK(std::abs(m - g.mean()[k]) < 3.0 * std::sqrt(var / n));
    // Standard error of the sample variance of a normal: var * sqrt(2 / (n - 1)).
    CHECK(std::abs(v - var) < 3.0 * var * std::sqrt(2.0 / (n - 1)));
  }
}

TEST_CASE("policy_softmax") {
  const PolicyBelief uniform = policy_softmax(std::vector<double>{1.0, 1.0, 1.0}, 3.7);
  for (double p : uniform.probabilities) CHECK(std::abs(p - 1.0 / 3.0) < 1e-12);

  const PolicyBelief two = policy_softmax(std::vector<double>{0.0, std::log(2.0)}, 1.0);
  CHECK(std::abs(two.probabilities[0] - 2.0 / 3.0) < 1e-12);
  CHECK(std::abs(two.probabilities[1] - 1.0 / 3.0) < 1e-12);

  // Extended-precision oracle.
  const PolicyBelief sharp = policy_softmax(std::vector<double>{0.0, 100.0}, 10.0);
  const long double tail = std::exp(-1000.0L);
  const long double p0 = 1.0L / (1.0L + tail);
  CHECK(std::isfinite(sharp.probabilities[0]));
  CHECK(std::abs(static_cast<long double>(sharp.probabilities[0]) - p0) < 1e-15L);
  CHECK(sharp.probabilities[1] >= 0.0);
  CHECK(static_cast<long double>(sharp.probabilities[1]) < 1e-300L);
  CHECK(sharp.argmax() == 0);

  CHECK_THROWS_AS(policy_softmax(std::vector<double>{}, 1.0), ContractViolation);
}

TEST_CASE("property: softmax sums to one and orders by G") {
  Gen gen(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::vector<double> g = gen.vector(static_cast<std::size_t>(gen.integer(1, 20)), -50.0, 50.0);
    const double gamma = gen.uniform(0.01, 20.0);
    const PolicyBelief b = policy_softmax(g, gamma);
    double total = 0.0;
    for (double p : b.probabilities) total += p;
    CHECK(std::abs(total - 1.0) < 1e-12);
    for (std::size_t i = 0; i < g.size(); ++i) {
      for (std::size_t j = 0; j < g.size(); ++j) {
        if (g[i] < g[j]) CHECK(b.probabilities[i] >= b.probabilities[j]);
      }
    }
  }
}
