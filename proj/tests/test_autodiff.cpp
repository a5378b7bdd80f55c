#include <doctest.h>

#include <cmath>
#include <sstream>

#include "aif/adam.hpp"
#include "aif/autodiff.hpp"
#include "aif/checkpoint.hpp"
#include "aif/error.hpp"
#include "aif/grad_check.hpp"
#include "aif/network.hpp"
#include "generators.hpp"

using namespace aif;
using aif::testing::Gen;

namespace {

Matrix scalar_matrix(double v) { return Matrix::Constant(1, 1, v); }

// Straight-line re-evaluation of a network, written without Eigen products.
std::pair<std::vector<double>, std::vector<double>> hand_forward(const NetworkParams& net, std::vector<double> h) {
  auto affine = [](const DenseLayer& layer, const std::vector<double>& in) {
    std::vector<double> out(static_cast<std::size_t>(layer.weight.cols()));
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
      double acc = layer.bias(0, j);
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) acc += in[static_cast<std::size_t>(i)] * layer.weight(i, j);
      out[static_cast<std::size_t>(j)] = acc;
    }
    return out;
  };
  for (const DenseLayer& layer : net.hidden()) {
    h = affine(layer, h);
    if (net.activation() == Activation::tanh) {
      for (double& x : h) x = std::tanh(x);
    }
  }
  std::vector<double> mean = affine(net.mean_head(), h);
  std::vector<double> var = affine(net.variance_head(), h);
  for (double& v : var) v = std::log1p(std::exp(v)) + kVarianceFloor;
  return {mean, var};
}

}  // namespace

TEST_CASE("tape: squared linear output has gradient 2 w x^2") {
  ad::Tape tape;
  const double w = 1.7, x = -0.6;
  const ad::Var wv = tape.leaf(scalar_matrix(w));
  const ad::Var xv = tape.constant(scalar_matrix(x));
  const ad::Var loss = ad::sum(tape, ad::square(tape, ad::matmul(tape, xv, wv)));
  tape.backward(loss);
  CHECK(std::abs(tape.adjoint(wv)(0, 0) - 2.0 * w * x * x) < 1e-12);
  CHECK(tape.adjoint(xv).isZero());
  CHECK_FALSE(tape.needs_grad(xv));
}

TEST_CASE("tape: loss constant in parameters gives zero gradient") {
  ad::Tape tape;
  Gen gen(1);
  const ad::Var w = tape.leaf(gen.matrix(3, 2));
  const ad::Var c = tape.constant(gen.matrix(3, 2));
  const ad::Var loss = ad::add(tape, ad::sum(tape, ad::scale(tape, w, 0.0)), ad::sum(tape, c));
  tape.backward(loss);
  CHECK(tape.adjoint(w).isZero());
}

TEST_CASE("tape: shape mismatches and double backward are rejected") {
  ad::Tape tape;
  const ad::Var a = tape.leaf(Matrix::Ones(2, 3));
  const ad::Var b = tape.leaf(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(ad::add(tape, a, b), ContractViolation);
  CHECK_THROWS_AS(ad::matmul(tape, a, b), ContractViolation);
  const ad::Var s = ad::sum(tape, a);
  tape.backward(s);
  CHECK_THROWS_AS(tape.backward(s), ContractViolation);
}

TEST_CASE("grad_check: every op against finite differences") {
  Gen gen(17);
  Matrix a = gen.matrix(3, 4), b = gen.matrix(3, 4), w = gen.matrix(4, 2), row = gen.matrix(1, 4);
  Matrix var_raw = gen.matrix(3, 4);
  Matrix q_raw = gen.matrix(3, 4);
  const Matrix noise = gen.matrix(3, 4);
  std::vector<Matrix*> params{&a, &b, &w, &row, &var_raw, &q_raw};
  const double err = grad_check(params, [&](ad::Tape& t, std::span<const ad::Var> p) {
    const ad::Var x = ad::tanh(t, ad::add_row(t, p[0], p[3]));
    const ad::Var y = ad::mul(t, x, ad::sub(t, p[1], ad::scale(t, p[0], 0.3)));
    const ad::Var z = ad::matmul(t, ad::add_scalar(t, y, 0.2), p[2]);
    const ad::GaussianVar g{p[1], ad::softplus(t, p[4])};
    const ad::GaussianVar q{p[0], ad::add_scalar(t, ad::softplus(t, p[5]), 0.1)};
    const ad::Var s = ad::reparam_sample(t, q, noise);
    const ad::Var cat = ad::concat_cols(t, std::vector<ad::Var>{z, ad::slice_cols(t, s, 1, 2)});
    ad::Var total = ad::mean(t, ad::square(t, cat));
    total = ad::add(t, total, ad::sum(t, ad::log_prob(t, s, g)));
    total = ad::add(t, total, ad::sum(t, ad::kl_divergence(t, q, g)));
    total = ad::add(t, total, ad::sum(t, ad::row_sum(t, ad::entropy(t, g))));
    return total;
  });
  CHECK(err < 1e-4);
}

TEST_CASE("grad_check: linear net with squared loss is exact") {
  NetworkParams net = NetworkParams::initialize({3, 2, {}, Activation::identity}, 4);
  CHECK(grad_check(net, std::vector<double>{0.3, -0.2, 0.9}, "mean_square") < 1e-8);
}

TEST_CASE("grad_check: tanh nets under every named loss") {
  Gen gen(8);
  for (const char* loss : {"mean_square", "nll", "kl_standard", "entropy", "reparam_kl"}) {
    NetworkParams net = NetworkParams::initialize({3, 2, {8, 8}, Activation::tanh}, 21);
    // Non-zero biases so every path is exercised.
    for (Matrix* t : net.tensors()) *t += 0.1 * gen.matrix(t->rows(), t->cols());
    CAPTURE(loss);
    CHECK(grad_check(net, gen.vector(3, -1.0, 1.0), loss) < 1e-4);
  }
}

TEST_CASE("network: zero parameters give zero mean and softplus(0) variance") {
  NetworkParams net = NetworkParams::initialize({2, 3, {4}, Activation::tanh}, 1);
  for (Matrix* t : net.tensors()) t->setZero();
  const DiagonalGaussian out = net.evaluate(std::vector<double>{0.4, -1.0});
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(out.mean()[i] == 0.0);
    CHECK(std::abs(out.variance()[i] - (std::log(2.0) + kVarianceFloor)) < 1e-12);
  }
}

TEST_CASE("network: identity layer reproduces the input") {
  DenseLayer mean{Matrix::Identity(3, 3), Matrix::Zero(1, 3)};
  DenseLayer var{Matrix::Zero(3, 3), Matrix::Zero(1, 3)};
  const NetworkParams net = make_network({}, mean, var, Activation::identity);
  const std::vector<double> x{0.5, -2.0, 7.0};
  CHECK(net.evaluate(x).mean() == x);
  CHECK_THROWS_AS(make_network({}, DenseLayer{Matrix::Identity(3, 2), Matrix::Zero(1, 2)}, var, Activation::tanh),
                  ContractViolation);
}

TEST_CASE("network: forward matches straight-line oracle") {
  Gen gen(30);
  for (int trial = 0; trial < 20; ++trial) {
    const int in = gen.integer(1, 5), out = gen.integer(1, 4);
    NetworkParams net = NetworkParams::initialize({in, out, {gen.integer(1, 9), gen.integer(1, 9)}, Activation::tanh},
                                                  static_cast<std::uint64_t>(trial));
    for (Matrix* t : net.tensors()) *t += 0.2 * gen.matrix(t->rows(), t->cols());
    const std::vector<double> x = gen.vector(static_cast<std::size_t>(in), -2.0, 2.0);
    const auto [mean, var] = hand_forward(net, x);
    const DiagonalGaussian g = net.evaluate(x);
    for (std::size_t i = 0; i < mean.size(); ++i) {
      CHECK(std::abs(g.mean()[i] - mean[i]) < 1e-12);
      CHECK(std::abs(g.variance()[i] - var[i]) < 1e-12);
      CHECK(g.variance()[i] >= kVarianceFloor);
    }
  }
}

TEST_CASE("network: Glorot bounds and seeded determinism") {
  const NetworkParams a = NetworkParams::initialize({5, 3, {7}, Activation::tanh}, 9);
  const NetworkParams b = NetworkParams::initialize({5, 3, {7}, Activation::tanh}, 9);
  const NetworkParams c = NetworkParams::initialize({5, 3, {7}, Activation::tanh}, 10);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  const double bound = std::sqrt(6.0 / (5 + 7));
  CHECK(a.hidden()[0].weight.cwiseAbs().maxCoeff() <= bound);
  CHECK(a.hidden()[0].bias.isZero());
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Matrix p = Matrix::Constant(2, 2, 1.5);
  const Matrix g = Matrix::Zero(2, 2);
  std::vector<Matrix*> params{&p};
  std::vector<const Matrix*> grads{&g};
  OptimizerState state = OptimizerState::for_tensors(params);
  adam_step(params, grads, state);
  CHECK(p == Matrix::Constant(2, 2, 1.5));
  CHECK(state.step == 1);
}

TEST_CASE("adam: first step moves each coordinate by the learning rate against the gradient") {
  Matrix p(1, 3);
  p << 0.0, 1.0, -1.0;
  Matrix g(1, 3);
  g << 0.5, -3.0, 1e-3;
  const Matrix before = p;
  std::vector<Matrix*> params{&p};
  std::vector<const Matrix*> grads{&g};
  OptimizerState state = OptimizerState::for_tensors(params, {0.01, 0.9, 0.999, 1e-8});
  adam_step(params, grads, state);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const double delta = p(0, i) - before(0, i);
    CHECK(std::abs(std::abs(delta) - 0.01) < 1e-6);
    CHECK((delta < 0) == (g(0, i) > 0));
  }
}

TEST_CASE("adam: converges on a quadratic bowl") {
  // f(x, y) = (x^2 + y^2) / 2
  Matrix p(1, 2);
  p << 0.5, -0.5;
  std::vector<Matrix*> params{&p};
  Matrix g(1, 2);
  std::vector<const Matrix*> grads{&g};
  OptimizerState state = OptimizerState::for_tensors(params, {0.02, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 100; ++i) {
    g << p(0, 0), p(0, 1);
    adam_step(params, grads, state);
  }
  g << p(0, 0), p(0, 1);
  // Oracle: replay the bias-corrected update rule by hand.
  double x[2] = {0.5, -0.5}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 100; ++t) {
    for (int i = 0; i < 2; ++i) {
      const double gi = x[i];
      m[i] = 0.9 * m[i] + 0.1 * gi;
      v[i] = 0.999 * v[i] + 0.001 * gi * gi;
      const double mh = m[i] / (1 - std::pow(0.9, t));
      const double vh = v[i] / (1 - std::pow(0.999, t));
      x[i] -= 0.02 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  CHECK(std::abs(p(0, 0) - x[0]) < 1e-12);
  CHECK(std::abs(p(0, 1) - x[1]) < 1e-12);
  CHECK(g.norm() < 1e-3);
}

TEST_CASE("adam: mismatched shapes are rejected") {
  Matrix p = Matrix::Zero(2, 2);
  const Matrix g = Matrix::Zero(3, 2);
  std::vector<Matrix*> params{&p};
  std::vector<const Matrix*> grads{&g};
  OptimizerState state = OptimizerState::for_tensors(params);
  CHECK_THROWS_AS(adam_step(params, grads, state), ContractViolation);
}

TEST_CASE("checkpoint round trip is bit exact and versioned") {
  Checkpoint c;
  c.kind = "test";
  c.metadata["note"] = "x";
  Gen gen(4);
  NetworkParams net = NetworkParams::initialize({3, 2, {5}, Activation::tanh}, 77);
  for (Matrix* t : net.tensors()) *t += gen.matrix(t->rows(), t->cols());
  c.networks.emplace_back("net", net);
  std::stringstream ss;
  write_checkpoint(ss, c);
  const std::string bytes = ss.str();
  CHECK(bytes.rfind("AIFNET v1\n", 0) == 0);
  const Checkpoint back = read_checkpoint(ss);
  CHECK(back.kind == "test");
  CHECK(back.meta("note") == "x");
  CHECK(back.network("net") == net);

  std::string bad = bytes;
  bad.replace(0, 9, "AIFNET v2");
  std::stringstream in(bad);
  CHECK_THROWS_AS(read_checkpoint(in), FormatError);
  std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(read_checkpoint(truncated), FormatError);
}
