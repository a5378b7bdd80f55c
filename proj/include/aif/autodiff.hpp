#pragma once

// Reverse-mode differentiation over batched matrices.
//
// Every node on a Tape holds a value matrix whose rows are batch entries.
// Operations append a node together with a pullback that, given the node's
// adjoint, accumulates into the adjoints of its inputs. A tape supports one
// backward pass; build a fresh tape for each forward pass.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace aif::ad {

using Matrix = Eigen::MatrixXd;

struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t index = kNone;
  bool valid() const { return index != kNone; }
};

class Tape;
using Pullback = std::function<void(Tape&, const Matrix& out_adjoint)>;

class Tape {
 public:
  /// Differentiable leaf (parameter or input). Its adjoint is readable
  /// after backward().
  Var leaf(Matrix value);
  /// Leaf that never receives an adjoint (data, frozen parameters).
  Var constant(Matrix value);

  /// Appends an interior node. Used by the operations below. The node is
  /// differentiable if any of `inputs` is; otherwise the pullback is dropped.
  Var push(Matrix value, std::initializer_list<Var> inputs, Pullback pullback);
  Var push(Matrix value, std::span<const Var> inputs, Pullback pullback);

  bool needs_grad(Var v) const;

  const Matrix& value(Var v) const;
  double scalar(Var v) const;

  /// Adjoint of v after backward(); zeros if nothing flowed into it.
  Matrix adjoint(Var v) const;

  /// Adds `delta` into the adjoint of v. Called from pullbacks.
  void accumulate(Var v, const Matrix& delta);

  /// Reverse sweep from a 1x1 output seeded with `seed`.
  void backward(Var output, double seed = 1.0);

  bool backward_done() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix adjoint;
    bool touched = false;
    bool needs_grad = false;
    Pullback pullback;
  };
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Elementwise and linear-algebra operations. Shapes follow Eigen semantics;
// mismatches raise aif::ContractViolation.
Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
/// a (B x m) + row (1 x m) broadcast over rows.
Var add_row(Tape& t, Var a, Var row);
Var scale(Tape& t, Var a, double c);
Var add_scalar(Tape& t, Var a, double c);
Var tanh(Tape& t, Var a);
Var softplus(Tape& t, Var a);
Var square(Tape& t, Var a);
/// Sum of all entries, 1x1.
Var sum(Tape& t, Var a);
/// Mean of all entries, 1x1.
Var mean(Tape& t, Var a);
/// Row sums, B x 1.
Var row_sum(Tape& t, Var a);
Var concat_cols(Tape& t, std::span<const Var> parts);
Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index count);

/// Batched diagonal Gaussian living on a tape: mean and variance are B x d.
struct GaussianVar {
  Var mean;
  Var variance;
};

/// Per-row log density, B x 1.
Var log_prob(Tape& t, Var x, const GaussianVar& g);
/// Per-row KL(q || p), B x 1.
Var kl_divergence(Tape& t, const GaussianVar& q, const GaussianVar& p);
/// Per-row entropy, B x 1.
Var entropy(Tape& t, const GaussianVar& g);
/// mean + sqrt(variance) .* noise, B x d. noise is a constant matrix.
Var reparam_sample(Tape& t, const GaussianVar& g, const Matrix& noise);

}  // namespace aif::ad
