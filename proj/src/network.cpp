#include "aif/network.hpp"

#include <cmath>
#include <random>

#include "aif/error.hpp"

namespace aif {

namespace {

double softplus_scalar(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

DenseLayer glorot_layer(int fan_in, int fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  DenseLayer layer{Matrix(fan_in, fan_out), Matrix::Zero(1, fan_out)};
  // Row-major fill order so the stream layout does not depend on Eigen's storage order.
  for (int r = 0; r < fan_in; ++r) {
    for (int c = 0; c < fan_out; ++c) layer.weight(r, c) = dist(rng);
  }
  return layer;
}

DenseLayer zero_layer(const DenseLayer& like) {
  return DenseLayer{Matrix::Zero(like.weight.rows(), like.weight.cols()),
                    Matrix::Zero(like.bias.rows(), like.bias.cols())};
}

void check_layer(const DenseLayer& layer, Eigen::Index fan_in, const char* what) {
  if (layer.weight.rows() != fan_in || layer.bias.rows() != 1 || layer.bias.cols() != layer.weight.cols()) {
    throw ContractViolation(std::string("make_network: incompatible dimensions at ") + what);
  }
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh:
      return "tanh";
    case Activation::identity:
      return "identity";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw ContractViolation("unknown activation '" + name + "'");
}

NetworkParams make_network(std::vector<DenseLayer> hidden, DenseLayer mean_head, DenseLayer variance_head,
                           Activation activation, std::uint64_t seed) {
  require(!hidden.empty() || mean_head.weight.rows() > 0, "make_network: network has no input");
  Eigen::Index width = hidden.empty() ? mean_head.weight.rows() : hidden.front().weight.rows();
  for (const DenseLayer& layer : hidden) {
    check_layer(layer, width, "hidden layer");
    width = layer.weight.cols();
  }
  check_layer(mean_head, width, "mean head");
  check_layer(variance_head, width, "variance head");
  require(mean_head.weight.cols() == variance_head.weight.cols(), "make_network: head output sizes differ");

  NetworkParams p;
  p.hidden_ = std::move(hidden);
  p.mean_head_ = std::move(mean_head);
  p.variance_head_ = std::move(variance_head);
  p.activation_ = activation;
  p.seed_ = seed;
  return p;
}

NetworkParams NetworkParams::initialize(const NetworkShape& shape, std::uint64_t seed) {
  require(shape.input_dim > 0 && shape.output_dim > 0, "NetworkParams::initialize: dimensions must be positive");
  std::mt19937_64 rng(seed);
  std::vector<DenseLayer> hidden;
  int width = shape.input_dim;
  for (int units : shape.hidden) {
    require(units > 0, "NetworkParams::initialize: hidden width must be positive");
    hidden.push_back(glorot_layer(width, units, rng));
    width = units;
  }
  DenseLayer mean_head = glorot_layer(width, shape.output_dim, rng);
  DenseLayer variance_head = glorot_layer(width, shape.output_dim, rng);
  return make_network(std::move(hidden), std::move(mean_head), std::move(variance_head), shape.activation, seed);
}

NetworkParams NetworkParams::zeros_like(const NetworkParams& other) {
  NetworkParams p;
  for (const DenseLayer& layer : other.hidden_) p.hidden_.push_back(zero_layer(layer));
  p.mean_head_ = zero_layer(other.mean_head_);
  p.variance_head_ = zero_layer(other.variance_head_);
  p.activation_ = other.activation_;
  p.seed_ = other.seed_;
  return p;
}

int NetworkParams::input_dim() const {
  return static_cast<int>(hidden_.empty() ? mean_head_.weight.rows() : hidden_.front().weight.rows());
}

int NetworkParams::output_dim() const { return static_cast<int>(mean_head_.weight.cols()); }

NetworkShape NetworkParams::shape() const {
  NetworkShape s;
  s.input_dim = input_dim();
  s.output_dim = output_dim();
  s.hidden.clear();
  for (const DenseLayer& layer : hidden_) s.hidden.push_back(static_cast<int>(layer.weight.cols()));
  s.activation = activation_;
  return s;
}

std::vector<Matrix*> NetworkParams::tensors() {
  std::vector<Matrix*> out;
  for (DenseLayer& layer : hidden_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  out.push_back(&mean_head_.weight);
  out.push_back(&mean_head_.bias);
  out.push_back(&variance_head_.weight);
  out.push_back(&variance_head_.bias);
  return out;
}

std::vector<const Matrix*> NetworkParams::tensors() const {
  std::vector<const Matrix*> out;
  for (Matrix* m : const_cast<NetworkParams*>(this)->tensors()) out.push_back(m);
  return out;
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const Matrix* m : tensors()) n += static_cast<std::size_t>(m->size());
  return n;
}

std::pair<Matrix, Matrix> NetworkParams::forward(const Matrix& input) const {
  if (input.cols() != input_dim()) {
    throw ContractViolation("forward: input has " + std::to_string(input.cols()) + " columns, network expects " +
                            std::to_string(input_dim()));
  }
  Matrix h = input;
  for (const DenseLayer& layer : hidden_) {
    Matrix z = h * layer.weight;
    z.rowwise() += layer.bias.row(0);
    if (activation_ == Activation::tanh) z = z.array().tanh();
    h = std::move(z);
  }
  Matrix mean = h * mean_head_.weight;
  mean.rowwise() += mean_head_.bias.row(0);
  Matrix raw = h * variance_head_.weight;
  raw.rowwise() += variance_head_.bias.row(0);
  Matrix variance = raw.unaryExpr(&softplus_scalar).array() + kVarianceFloor;
  return {std::move(mean), std::move(variance)};
}

DiagonalGaussian NetworkParams::evaluate(std::span<const double> input) const {
  Matrix in(1, static_cast<Eigen::Index>(input.size()));
  for (std::size_t i = 0; i < input.size(); ++i) in(0, static_cast<Eigen::Index>(i)) = input[i];
  auto [mean, variance] = forward(in);
  return DiagonalGaussian(std::vector<double>(mean.data(), mean.data() + mean.size()),
                          std::vector<double>(variance.data(), variance.data() + variance.size()));
}

BoundNetwork bind(ad::Tape& tape, const NetworkParams& params, bool trainable) {
  BoundNetwork bound{&params, {}};
  for (const Matrix* m : params.tensors()) bound.tensors.push_back(trainable ? tape.leaf(*m) : tape.constant(*m));
  return bound;
}

ad::GaussianVar forward_gaussian(ad::Tape& tape, const BoundNetwork& net, ad::Var input) {
  const NetworkParams& p = *net.params;
  if (tape.value(input).cols() != p.input_dim()) {
    throw ContractViolation("forward_gaussian: input has " + std::to_string(tape.value(input).cols()) +
                            " columns, network expects " + std::to_string(p.input_dim()));
  }
  ad::Var h = input;
  std::size_t k = 0;
  for (std::size_t layer = 0; layer < p.hidden().size(); ++layer) {
    ad::Var z = ad::add_row(tape, ad::matmul(tape, h, net.tensors[k]), net.tensors[k + 1]);
    k += 2;
    h = p.activation() == Activation::tanh ? ad::tanh(tape, z) : z;
  }
  ad::Var mean = ad::add_row(tape, ad::matmul(tape, h, net.tensors[k]), net.tensors[k + 1]);
  ad::Var raw = ad::add_row(tape, ad::matmul(tape, h, net.tensors[k + 2]), net.tensors[k + 3]);
  ad::Var variance = ad::add_scalar(tape, ad::softplus(tape, raw), kVarianceFloor);
  return {mean, variance};
}

NetworkParams gradients(const ad::Tape& tape, const BoundNetwork& net) {
  NetworkParams grads = NetworkParams::zeros_like(*net.params);
  std::vector<Matrix*> out = grads.tensors();
  for (std::size_t i = 0; i < out.size(); ++i) *out[i] = tape.adjoint(net.tensors[i]);
  return grads;
}

}  // namespace aif
