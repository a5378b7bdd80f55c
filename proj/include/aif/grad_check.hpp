#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "aif/autodiff.hpp"
#include "aif/network.hpp"

namespace aif {

/// Builds a scalar loss on a tape from leaves bound to the checked tensors.
using LossBuilder = std::function<ad::Var(ad::Tape&, std::span<const ad::Var> params)>;

/// max over entries of |analytic - fd| / max(1e-8, |analytic| + |fd|), with
/// central differences of the given step. The tensors are perturbed in place
/// and restored before returning.
double grad_check(std::span<Matrix* const> params, const LossBuilder& loss, double step = 1e-5);

/// Scalar functionals of a network's Gaussian output available by name:
///   "mean_square"    sum of mean^2
///   "nll"            -log N(target | mean, variance), target = 0.5
///   "kl_standard"    KL(output || N(0, I))
///   "entropy"        entropy of the output
///   "reparam_kl"     KL(N(reparam sample, output var) || N(0, I)), fixed noise
double grad_check(NetworkParams& params, std::span<const double> input, const std::string& loss,
                  double step = 1e-5);

}  // namespace aif
