#pragma once

#include <functional>
#include <vector>

#include "invlab/tensor.hpp"

namespace invlab {

/// Reverse-mode tape over dense tensors.
///
/// Each operation computes its forward result eagerly and, when any input
/// requires a gradient, appends a backward closure. backward() replays the
/// closures in reverse recorded order exactly once, so gradients accumulate
/// additively across fan-out. A tape is single-writer: one training or
/// attack run owns it exclusively.
class Tape {
 public:
  // --- core linear algebra -------------------------------------------------
  TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
  TensorPtr add(const TensorPtr& a, const TensorPtr& b);
  /// rows of a [r x c] shifted by the row vector b [1 x c]
  TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& b);
  TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
  TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
  TensorPtr scale(const TensorPtr& a, double alpha);
  TensorPtr add_scalar(const TensorPtr& a, double alpha);

  // --- nonlinearities -------------------------------------------------------
  TensorPtr activate(const TensorPtr& x, Activation kind);
  TensorPtr exp(const TensorPtr& x);
  TensorPtr log(const TensorPtr& x);
  TensorPtr softplus(const TensorPtr& x);
  TensorPtr clamp_min(const TensorPtr& x, double floor);

  /// Row-wise log-softmax, stabilized by subtracting the row max.
  TensorPtr softmax_logprobs(const TensorPtr& logits);

  // --- reductions & indexing ------------------------------------------------
  TensorPtr sum(const TensorPtr& x);
  TensorPtr mean(const TensorPtr& x);
  /// out[i] = x[i, labels[i]], shape [rows x 1]
  TensorPtr gather_labels(const TensorPtr& x, const std::vector<int>& labels);
  /// Frobenius inner product sum(a .* b) as a scalar.
  TensorPtr frob_inner(const TensorPtr& a, const TensorPtr& b);

  // --- kernel-method helpers --------------------------------------------------
  /// D[i][j] = squared L2 distance between rows i and j of x [n x q].
  TensorPtr pairwise_sqdist(const TensorPtr& x);
  /// Double-centered square matrix: x - rowmean - colmean + totalmean.
  TensorPtr double_center(const TensorPtr& x);

  /// Backpropagate from a scalar loss. Leaf gradients accumulate across
  /// repeated calls; op-output gradients are recomputed per call.
  void backward(const TensorPtr& loss);

  void clear() {
    records_.clear();
    outputs_.clear();
  }
  std::size_t size() const { return records_.size(); }

 private:
  TensorPtr out(Shape shape, std::vector<double> values, bool requires_grad);
  void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }
  std::vector<std::function<void()>> records_;
  std::vector<TensorPtr> outputs_;
};

/// SGD with classical momentum: v <- momentum*v + grad; p <- p - lr*v.
/// Gradients are cleared after each step.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<TensorPtr> params, double lr, double momentum);

  void step();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  std::vector<TensorPtr> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_;
  double momentum_;
};

/// One optimizer step over params (velocity-free convenience, momentum = 0
/// unless an optimizer is kept alive across calls).
void sgd_step(const std::vector<TensorPtr>& params, double lr, double momentum);

/// Max relative gradient error of a scalar-valued function of one tensor,
/// reverse mode vs central finite differences (h = 1e-5). The probe must
/// have at most 64 elements. Error metric: |a - n| / max(|a|, |n|, 1).
double gradcheck(const std::function<TensorPtr(Tape&, const TensorPtr&)>& fn,
                 const Tensor& probe);

}  // namespace invlab
