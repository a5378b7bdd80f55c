#include "aif/adam.hpp"

#include <cmath>

#include "aif/error.hpp"

namespace aif {

OptimizerState OptimizerState::for_tensors(std::span<const Matrix* const> params, AdamConfig config) {
  OptimizerState s;
  s.config = config;
  for (const Matrix* p : params) {
    s.first_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
    s.second_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
  return s;
}

OptimizerState OptimizerState::for_network(const NetworkParams& params, AdamConfig config) {
  const auto tensors = params.tensors();
  return for_tensors(tensors, config);
}

void adam_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, OptimizerState& state) {
  require(params.size() == grads.size() && params.size() == state.first_moment.size(),
          "adam_step: parameter, gradient and state lists differ in length");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& p = *params[i];
    const Matrix& g = *grads[i];
    require(p.rows() == g.rows() && p.cols() == g.cols() && p.rows() == state.first_moment[i].rows() &&
                p.cols() == state.first_moment[i].cols(),
            "adam_step: shape mismatch at tensor " + std::to_string(i));
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    const Matrix& g = *grads[i];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    const Eigen::ArrayXXd m_hat = m.array() / correction1;
    const Eigen::ArrayXXd v_hat = v.array() / correction2;
    params[i]->array() -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
  }
}

void adam_step(NetworkParams& params, const NetworkParams& grads, OptimizerState& state) {
  const auto p = params.tensors();
  const auto g = grads.tensors();
  require(p.size() == g.size(), "adam_step: networks have different layer counts");
  adam_step(std::span<Matrix* const>(p), std::span<const Matrix* const>(g), state);
}

}  // namespace aif
