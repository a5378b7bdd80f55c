#include "aif/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "aif/error.hpp"

namespace aif {

namespace {

double evaluate(std::span<Matrix* const> params, const LossBuilder& loss) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (Matrix* p : params) leaves.push_back(tape.leaf(*p));
  return tape.scalar(loss(tape, leaves));
}

}  // namespace

double grad_check(std::span<Matrix* const> params, const LossBuilder& loss, double step) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (Matrix* p : params) leaves.push_back(tape.leaf(*p));
  tape.backward(loss(tape, leaves));

  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix analytic = tape.adjoint(leaves[i]);
    Matrix& p = *params[i];
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      const double saved = p.data()[k];
      p.data()[k] = saved + step;
      const double up = evaluate(params, loss);
      p.data()[k] = saved - step;
      const double down = evaluate(params, loss);
      p.data()[k] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double a = analytic.data()[k];
      worst = std::max(worst, std::abs(a - fd) / std::max(1e-8, std::abs(a) + std::abs(fd)));
    }
  }
  return worst;
}

double grad_check(NetworkParams& params, std::span<const double> input, const std::string& loss, double step) {
  Matrix x(1, static_cast<Eigen::Index>(input.size()));
  for (std::size_t i = 0; i < input.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = input[i];
  const Eigen::Index d = params.output_dim();
  Matrix noise(1, d);
  for (Eigen::Index i = 0; i < d; ++i) noise(0, i) = 0.3 - 0.17 * static_cast<double>(i);

  LossBuilder builder;
  auto make = [&](auto tail) {
    return [&params, x, tail](ad::Tape& t, std::span<const ad::Var> leaves) {
      BoundNetwork net{&params, std::vector<ad::Var>(leaves.begin(), leaves.end())};
      ad::GaussianVar g = forward_gaussian(t, net, t.constant(x));
      return tail(t, g);
    };
  };
  auto standard = [d](ad::Tape& t) {
    return ad::GaussianVar{t.constant(Matrix::Zero(1, d)), t.constant(Matrix::Ones(1, d))};
  };
  if (loss == "mean_square") {
    builder = make([](ad::Tape& t, const ad::GaussianVar& g) { return ad::sum(t, ad::square(t, g.mean)); });
  } else if (loss == "nll") {
    builder = make([d](ad::Tape& t, const ad::GaussianVar& g) {
      return ad::scale(t, ad::sum(t, ad::log_prob(t, t.constant(Matrix::Constant(1, d, 0.5)), g)), -1.0);
    });
  } else if (loss == "kl_standard") {
    builder = make([standard](ad::Tape& t, const ad::GaussianVar& g) {
      return ad::sum(t, ad::kl_divergence(t, g, standard(t)));
    });
  } else if (loss == "entropy") {
    builder = make([](ad::Tape& t, const ad::GaussianVar& g) { return ad::sum(t, ad::entropy(t, g)); });
  } else if (loss == "reparam_kl") {
    builder = make([standard, noise](ad::Tape& t, const ad::GaussianVar& g) {
      ad::GaussianVar shifted{ad::reparam_sample(t, g, noise), g.variance};
      return ad::sum(t, ad::kl_divergence(t, shifted, standard(t)));
    });
  } else {
    throw ContractViolation("grad_check: unknown loss '" + loss + "'");
  }
  const auto tensors = params.tensors();
  return grad_check(std::span<Matrix* const>(tensors), builder, step);
}

}  // namespace aif
