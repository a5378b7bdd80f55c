#pragma once

// Fully connected networks with a diagonal-Gaussian output head.
//
//   h_0 = input
//   h_k = act(h_{k-1} W_k + b_k)              for each hidden layer
//   mean     = h W_mean + b_mean
//   variance = softplus(h W_var + b_var) + kVarianceFloor
//
// Rows of every input matrix are independent batch entries.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "aif/autodiff.hpp"
#include "aif/gaussian.hpp"

namespace aif {

using Matrix = Eigen::MatrixXd;

enum class Activation { tanh, identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct DenseLayer {
  Matrix weight;  // fan_in x fan_out
  Matrix bias;    // 1 x fan_out

  friend bool operator==(const DenseLayer& a, const DenseLayer& b) {
    return a.weight == b.weight && a.bias == b.bias;
  }
};

struct NetworkShape {
  int input_dim = 1;
  int output_dim = 1;
  std::vector<int> hidden = {64, 64};
  Activation activation = Activation::tanh;
};

class NetworkParams {
 public:
  NetworkParams() = default;

  /// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  static NetworkParams initialize(const NetworkShape& shape, std::uint64_t seed);
  /// Same shapes, every entry zero. Used for gradients and moment buffers.
  static NetworkParams zeros_like(const NetworkParams& other);

  int input_dim() const;
  int output_dim() const;
  Activation activation() const { return activation_; }
  std::uint64_t seed() const { return seed_; }
  NetworkShape shape() const;

  std::vector<DenseLayer>& hidden() { return hidden_; }
  const std::vector<DenseLayer>& hidden() const { return hidden_; }
  DenseLayer& mean_head() { return mean_head_; }
  const DenseLayer& mean_head() const { return mean_head_; }
  DenseLayer& variance_head() { return variance_head_; }
  const DenseLayer& variance_head() const { return variance_head_; }

  /// Every tensor in canonical order: hidden (W, b)..., mean (W, b), variance (W, b).
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  std::size_t parameter_count() const;

  /// Batched forward pass without recording. Returns (mean, variance).
  std::pair<Matrix, Matrix> forward(const Matrix& input) const;
  /// Single-input convenience wrapper.
  DiagonalGaussian evaluate(std::span<const double> input) const;

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;

 private:
  friend NetworkParams make_network(std::vector<DenseLayer>, DenseLayer, DenseLayer, Activation, std::uint64_t);

  std::vector<DenseLayer> hidden_;
  DenseLayer mean_head_;
  DenseLayer variance_head_;
  Activation activation_ = Activation::tanh;
  std::uint64_t seed_ = 0;
};

/// Assembles a network from explicit layers; validates that dimensions chain.
NetworkParams make_network(std::vector<DenseLayer> hidden, DenseLayer mean_head, DenseLayer variance_head,
                           Activation activation, std::uint64_t seed = 0);

/// Tape handles for every tensor of one network, in canonical order.
struct BoundNetwork {
  const NetworkParams* params = nullptr;
  std::vector<ad::Var> tensors;
};

/// Records the network's tensors as leaves on the tape.
BoundNetwork bind(ad::Tape& tape, const NetworkParams& params, bool trainable = true);

/// Taped forward pass; input is B x input_dim.
ad::GaussianVar forward_gaussian(ad::Tape& tape, const BoundNetwork& net, ad::Var input);

/// Adjoints of the bound tensors after tape.backward(), shaped like the params.
NetworkParams gradients(const ad::Tape& tape, const BoundNetwork& net);

}  // namespace aif
