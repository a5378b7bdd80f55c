#include "aif/autodiff.hpp"

#include <cmath>
#include <string>

#include "aif/error.hpp"

namespace aif::ad {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractViolation(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()) + ")");
  }
}

// Numerically stable log(1 + exp(x)).
double softplus_scalar(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var Tape::leaf(Matrix value) {
  if (backward_done_) throw ContractViolation("Tape: cannot record after backward()");
  nodes_.push_back(Node{std::move(value), Matrix(), false, true, nullptr});
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Matrix value) {
  if (backward_done_) throw ContractViolation("Tape: cannot record after backward()");
  nodes_.push_back(Node{std::move(value), Matrix(), false, false, nullptr});
  return Var{nodes_.size() - 1};
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, Pullback pullback) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(pullback));
}

Var Tape::push(Matrix value, std::span<const Var> inputs, Pullback pullback) {
  if (backward_done_) throw ContractViolation("Tape: cannot record after backward()");
  bool differentiable = false;
  for (Var v : inputs) differentiable = differentiable || needs_grad(v);
  nodes_.push_back(Node{std::move(value), Matrix(), false, differentiable,
                        differentiable ? std::move(pullback) : Pullback()});
  return Var{nodes_.size() - 1};
}

bool Tape::needs_grad(Var v) const { return node(v).needs_grad; }

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.index >= nodes_.size()) throw ContractViolation("Tape: variable not recorded on this tape");
  return nodes_[v.index];
}

const Matrix& Tape::value(Var v) const { return node(v).value; }

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  require(m.rows() == 1 && m.cols() == 1, "Tape::scalar: value is not 1x1");
  return m(0, 0);
}

Matrix Tape::adjoint(Var v) const {
  const Node& n = node(v);
  if (!n.touched) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.adjoint;
}

void Tape::accumulate(Var v, const Matrix& delta) {
  Node& n = nodes_.at(v.index);
  if (!n.needs_grad) return;
  require_same_shape(n.value, delta, "Tape::accumulate");
  if (!n.touched) {
    n.adjoint = delta;
    n.touched = true;
  } else {
    n.adjoint += delta;
  }
}

void Tape::backward(Var output, double seed) {
  if (nodes_.empty()) throw ContractViolation("Tape::backward: nothing recorded (backward before forward)");
  if (backward_done_) throw ContractViolation("Tape::backward: already run for this forward pass");
  const Matrix& out = value(output);
  require(out.rows() == 1 && out.cols() == 1, "Tape::backward: output must be 1x1");
  accumulate(output, Matrix::Constant(1, 1, seed));
  backward_done_ = true;
  for (std::size_t i = output.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.touched || !n.pullback) continue;
    // The pullback may accumulate into earlier nodes only, so holding a
    // reference to this node's adjoint is safe.
    n.pullback(*this, n.adjoint);
  }
}

Var matmul(Tape& t, Var a, Var b) {
  const Matrix& va = t.value(a);
  const Matrix& vb = t.value(b);
  if (va.cols() != vb.rows()) {
    throw ContractViolation("matmul: inner dimensions differ (" + std::to_string(va.cols()) + " vs " +
                            std::to_string(vb.rows()) + ")");
  }
  Matrix out = va * vb;
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
    if (tp.needs_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

Var add(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "add");
  Matrix out = t.value(a) + t.value(b);
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "sub");
  Matrix out = t.value(a) - t.value(b);
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, -g);
  });
}

Var mul(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "mul");
  Matrix out = t.value(a).cwiseProduct(t.value(b));
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g.cwiseProduct(tp.value(b)));
    tp.accumulate(b, g.cwiseProduct(tp.value(a)));
  });
}

Var add_row(Tape& t, Var a, Var row) {
  const Matrix& va = t.value(a);
  const Matrix& vr = t.value(row);
  require(vr.rows() == 1 && vr.cols() == va.cols(), "add_row: row shape does not match columns");
  Matrix out = va.rowwise() + vr.row(0);
  return t.push(std::move(out), {a, row}, [a, row](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(row, g.colwise().sum());
  });
}

Var scale(Tape& t, Var a, double c) {
  Matrix out = t.value(a) * c;
  return t.push(std::move(out), {a}, [a, c](Tape& tp, const Matrix& g) { tp.accumulate(a, g * c); });
}

Var add_scalar(Tape& t, Var a, double c) {
  Matrix out = t.value(a).array() + c;
  return t.push(std::move(out), {a}, [a](Tape& tp, const Matrix& g) { tp.accumulate(a, g); });
}

Var tanh(Tape& t, Var a) {
  Matrix out = t.value(a).array().tanh();
  const std::size_t self = t.size();
  return t.push(std::move(out), {a}, [a, self](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(Var{self});
    tp.accumulate(a, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var softplus(Tape& t, Var a) {
  Matrix out = t.value(a).unaryExpr(&softplus_scalar);
  return t.push(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g.cwiseProduct(tp.value(a).unaryExpr(&sigmoid_scalar)));
  });
}

Var square(Tape& t, Var a) {
  Matrix out = t.value(a).array().square();
  return t.push(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, 2.0 * g.cwiseProduct(tp.value(a)));
  });
}

Var sum(Tape& t, Var a) {
  Matrix out = Matrix::Constant(1, 1, t.value(a).sum());
  return t.push(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
    const Matrix& va = tp.value(a);
    tp.accumulate(a, Matrix::Constant(va.rows(), va.cols(), g(0, 0)));
  });
}

Var mean(Tape& t, Var a) {
  const Matrix& va = t.value(a);
  require(va.size() > 0, "mean: empty input");
  const double n = static_cast<double>(va.size());
  Matrix out = Matrix::Constant(1, 1, va.sum() / n);
  return t.push(std::move(out), {a}, [a, n](Tape& tp, const Matrix& g) {
    const Matrix& v = tp.value(a);
    tp.accumulate(a, Matrix::Constant(v.rows(), v.cols(), g(0, 0) / n));
  });
}

Var row_sum(Tape& t, Var a) {
  Matrix out = t.value(a).rowwise().sum();
  return t.push(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
    const Matrix& va = tp.value(a);
    tp.accumulate(a, g.replicate(1, va.cols()));
  });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Eigen::Index rows = t.value(parts.front()).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    require(t.value(p).rows() == rows, "concat_cols: row counts differ");
    cols += t.value(p).cols();
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  std::vector<Var> inputs(parts.begin(), parts.end());
  for (Var p : inputs) {
    const Matrix& v = t.value(p);
    out.middleCols(offset, v.cols()) = v;
    offset += v.cols();
  }
  return t.push(std::move(out), std::span<const Var>(parts), [inputs = std::move(inputs)](Tape& tp, const Matrix& g) {
    Eigen::Index off = 0;
    for (Var p : inputs) {
      const Eigen::Index c = tp.value(p).cols();
      tp.accumulate(p, g.middleCols(off, c));
      off += c;
    }
  });
}

Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index count) {
  const Matrix& va = t.value(a);
  require(start >= 0 && count >= 0 && start + count <= va.cols(), "slice_cols: range out of bounds");
  Matrix out = va.middleCols(start, count);
  return t.push(std::move(out), {a}, [a, start, count](Tape& tp, const Matrix& g) {
    const Matrix& v = tp.value(a);
    Matrix full = Matrix::Zero(v.rows(), v.cols());
    full.middleCols(start, count) = g;
    tp.accumulate(a, full);
  });
}

Var log_prob(Tape& t, Var x, const GaussianVar& g) {
  const Matrix& vx = t.value(x);
  const Matrix& mu = t.value(g.mean);
  const Matrix& var = t.value(g.variance);
  require_same_shape(vx, mu, "log_prob");
  require_same_shape(mu, var, "log_prob");
  const Eigen::ArrayXXd diff = vx.array() - mu.array();
  Matrix out = (-0.5 * (kLog2Pi + var.array().log()) - diff.square() / (2.0 * var.array())).rowwise().sum();
  return t.push(std::move(out), {x, g.mean, g.variance}, [x, g](Tape& tp, const Matrix& gr) {
    const Eigen::ArrayXXd d = tp.value(x).array() - tp.value(g.mean).array();
    const Eigen::ArrayXXd v = tp.value(g.variance).array();
    const Eigen::ArrayXXd up = gr.replicate(1, d.cols()).array();
    // d/dx = -(x-mu)/v, d/dmu = (x-mu)/v, d/dv = -1/(2v) + (x-mu)^2/(2v^2)
    const Eigen::ArrayXXd dmu = up * d / v;
    tp.accumulate(x, (-dmu).matrix());
    tp.accumulate(g.mean, dmu.matrix());
    tp.accumulate(g.variance, (up * (-0.5 / v + d.square() / (2.0 * v.square()))).matrix());
  });
}

Var kl_divergence(Tape& t, const GaussianVar& q, const GaussianVar& p) {
  const Matrix& mq = t.value(q.mean);
  const Matrix& vq = t.value(q.variance);
  const Matrix& mp = t.value(p.mean);
  const Matrix& vp = t.value(p.variance);
  require_same_shape(mq, vq, "kl_divergence");
  require_same_shape(mq, mp, "kl_divergence");
  require_same_shape(mp, vp, "kl_divergence");
  const Eigen::ArrayXXd diff = mq.array() - mp.array();
  Matrix out =
      0.5 * ((vp.array() / vq.array()).log() + (vq.array() + diff.square()) / vp.array() - 1.0).rowwise().sum();
  return t.push(std::move(out), {q.mean, q.variance, p.mean, p.variance}, [q, p](Tape& tp, const Matrix& gr) {
    const Eigen::ArrayXXd d = tp.value(q.mean).array() - tp.value(p.mean).array();
    const Eigen::ArrayXXd sq = tp.value(q.variance).array();
    const Eigen::ArrayXXd sp = tp.value(p.variance).array();
    const Eigen::ArrayXXd up = gr.replicate(1, d.cols()).array();
    const Eigen::ArrayXXd dmq = up * d / sp;
    tp.accumulate(q.mean, dmq.matrix());
    tp.accumulate(p.mean, (-dmq).matrix());
    tp.accumulate(q.variance, (up * 0.5 * (1.0 / sp - 1.0 / sq)).matrix());
    tp.accumulate(p.variance, (up * 0.5 * (1.0 / sp - (sq + d.square()) / sp.square())).matrix());
  });
}

Var entropy(Tape& t, const GaussianVar& g) {
  const Matrix& var = t.value(g.variance);
  Matrix out = (0.5 * (1.0 + kLog2Pi + var.array().log())).rowwise().sum();
  return t.push(std::move(out), {g.mean, g.variance}, [g](Tape& tp, const Matrix& gr) {
    const Eigen::ArrayXXd v = tp.value(g.variance).array();
    tp.accumulate(g.variance, (gr.replicate(1, v.cols()).array() * 0.5 / v).matrix());
  });
}

Var reparam_sample(Tape& t, const GaussianVar& g, const Matrix& noise) {
  const Matrix& mu = t.value(g.mean);
  const Matrix& var = t.value(g.variance);
  require_same_shape(mu, var, "reparam_sample");
  require_same_shape(mu, noise, "reparam_sample");
  Matrix out = mu.array() + var.array().sqrt() * noise.array();
  return t.push(std::move(out), {g.mean, g.variance}, [g, noise](Tape& tp, const Matrix& gr) {
    tp.accumulate(g.mean, gr);
    const Eigen::ArrayXXd sd = tp.value(g.variance).array().sqrt();
    tp.accumulate(g.variance, (gr.array() * noise.array() / (2.0 * sd)).matrix());
  });
}

}  // namespace aif::ad
