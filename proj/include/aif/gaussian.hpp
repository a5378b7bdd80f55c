#pragma once

// Closed-form algebra for diagonal multivariate Gaussians and the
// precision-weighted softmax used to turn expected free energies into a
// belief over policies. Everything here is double precision and pure.

#include <cstddef>
#include <span>
#include <vector>

namespace aif {

/// Every variance is clamped to at least this value on construction.
inline constexpr double kVarianceFloor = 1e-6;

class DiagonalGaussian {
 public:
  DiagonalGaussian() = default;
  /// Variances below kVarianceFloor are raised to it. Throws
  /// ContractViolation if the sizes differ or any entry is non-finite.
  DiagonalGaussian(std::vector<double> mean, std::vector<double> variance);

  /// N(mean, variance * I).
  static DiagonalGaussian isotropic(std::vector<double> mean, double variance);

  std::size_t dim() const { return mean_.size(); }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& variance() const { return variance_; }
  std::vector<double> stddev() const;

  friend bool operator==(const DiagonalGaussian&, const DiagonalGaussian&) = default;

 private:
  std::vector<double> mean_;
  std::vector<double> variance_;
};

struct PolicyBelief {
  std::vector<double> probabilities;
  double gamma = 1.0;

  std::size_t argmax() const;
};

double log_prob(std::span<const double> x, const DiagonalGaussian& g);

/// KL(q || p), analytic.
double kl_divergence(const DiagonalGaussian& q, const DiagonalGaussian& p);

double entropy(const DiagonalGaussian& g);

/// mean + sqrt(variance) * noise, with noise drawn by the caller from N(0, I).
std::vector<double> reparam_sample(const DiagonalGaussian& g, std::span<const double> noise);

/// softmax(-gamma * G) with max subtraction. Lower G gets higher probability.
PolicyBelief policy_softmax(std::span<const double> g_values, double gamma);

}  // namespace aif
