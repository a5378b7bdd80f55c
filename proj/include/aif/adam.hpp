#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "aif/network.hpp"

namespace aif {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment buffers for a fixed list of parameter tensors.
struct OptimizerState {
  AdamConfig config;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::uint64_t step = 0;

  /// Zeroed buffers shaped like `params`.
  static OptimizerState for_tensors(std::span<const Matrix* const> params, AdamConfig config = {});
  static OptimizerState for_network(const NetworkParams& params, AdamConfig config = {});
};

/// One bias-corrected adaptive-moment update, in place. Throws
/// ContractViolation if the tensor lists or shapes disagree.
void adam_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, OptimizerState& state);

void adam_step(NetworkParams& params, const NetworkParams& grads, OptimizerState& state);

}  // namespace aif
