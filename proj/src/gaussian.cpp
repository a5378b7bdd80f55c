#include "aif/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "aif/error.hpp"

namespace aif {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // ln(2*pi)

void require_same_dim(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw ContractViolation(std::string(op) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                            std::to_string(b) + ")");
  }
}

}  // namespace

DiagonalGaussian::DiagonalGaussian(std::vector<double> mean, std::vector<double> variance)
    : mean_(std::move(mean)), variance_(std::move(variance)) {
  require_same_dim(mean_.size(), variance_.size(), "DiagonalGaussian");
  for (std::size_t i = 0; i < mean_.size(); ++i) {
    if (!std::isfinite(mean_[i]) || !std::isfinite(variance_[i])) {
      throw ContractViolation("DiagonalGaussian: non-finite parameter at index " + std::to_string(i));
    }
    variance_[i] = std::max(variance_[i], kVarianceFloor);
  }
}

DiagonalGaussian DiagonalGaussian::isotropic(std::vector<double> mean, double variance) {
  std::vector<double> var(mean.size(), variance);
  return DiagonalGaussian(std::move(mean), std::move(var));
}

std::vector<double> DiagonalGaussian::stddev() const {
  std::vector<double> out(variance_.size());
  std::transform(variance_.begin(), variance_.end(), out.begin(), [](double v) { return std::sqrt(v); });
  return out;
}

std::size_t PolicyBelief::argmax() const {
  require(!probabilities.empty(), "PolicyBelief::argmax: empty belief");
  return static_cast<std::size_t>(
      std::distance(probabilities.begin(), std::max_element(probabilities.begin(), probabilities.end())));
}

double log_prob(std::span<const double> x, const DiagonalGaussian& g) {
  require_same_dim(x.size(), g.dim(), "log_prob");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double var = g.variance()[i];
    const double diff = x[i] - g.mean()[i];
    total += -0.5 * (kLog2Pi + std::log(var)) - diff * diff / (2.0 * var);
  }
  return total;
}

double kl_divergence(const DiagonalGaussian& q, const DiagonalGaussian& p) {
  require_same_dim(q.dim(), p.dim(), "kl_divergence");
  double total = 0.0;
  for (std::size_t i = 0; i < q.dim(); ++i) {
    const double vq = q.variance()[i];
    const double vp = p.variance()[i];
    const double diff = q.mean()[i] - p.mean()[i];
    total += std::log(vp / vq) + (vq + diff * diff) / vp - 1.0;
  }
  // Rounding can leave a tiny negative residue for q == p in some dimensions.
  return std::max(0.0, 0.5 * total);
}

double entropy(const DiagonalGaussian& g) {
  double total = 0.0;
  for (double var : g.variance()) total += 1.0 + kLog2Pi + std::log(var);
  return 0.5 * total;
}

std::vector<double> reparam_sample(const DiagonalGaussian& g, std::span<const double> noise) {
  require_same_dim(noise.size(), g.dim(), "reparam_sample");
  std::vector<double> out(g.dim());
  for (std::size_t i = 0; i < g.dim(); ++i) out[i] = g.mean()[i] + std::sqrt(g.variance()[i]) * noise[i];
  return out;
}

PolicyBelief policy_softmax(std::span<const double> g_values, double gamma) {
  require(!g_values.empty(), "policy_softmax: empty input");
  require(gamma > 0.0 && std::isfinite(gamma), "policy_softmax: gamma must be positive");
  std::vector<double> logits(g_values.size());
  for (std::size_t j = 0; j < g_values.size(); ++j) {
    require(std::isfinite(g_values[j]), "policy_softmax: non-finite G value");
    logits[j] = -gamma * g_values[j];
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& l : logits) {
    l = std::exp(l - m);
    z += l;
  }
  for (double& l : logits) l /= z;
  return PolicyBelief{std::move(logits), gamma};
}

}  // namespace aif
