#include "invlab/tape.hpp"

#include <algorithm>
#include <cmath>

#include "invlab/kernels.hpp"

namespace invlab {

namespace {

void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (a->shape != b->shape) {
    throw ShapeError(std::string(op) + ": shapes " + shape_to_string(a->shape) + " and " +
                     shape_to_string(b->shape) + " differ");
  }
}

// Skip the whole closure when the output gradient was never materialized:
// that branch did not reach the loss and contributes zero.
bool out_grad_ready(const TensorPtr& out) { return out->has_grad(); }

}  // namespace

TensorPtr Tape::out(Shape shape, std::vector<double> values, bool requires_grad) {
  auto t = std::make_shared<Tensor>(std::move(shape), std::move(values));
  t->requires_grad = requires_grad;
  if (requires_grad) outputs_.push_back(t);
  return t;
}

TensorPtr Tape::matmul(const TensorPtr& a, const TensorPtr& b) {
  if (!a->is_matrix() || !b->is_matrix() || a->cols() != b->rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_to_string(a->shape) + " and " +
                     shape_to_string(b->shape));
  }
  const int p = a->rows(), q = a->cols(), s = b->cols();
  std::vector<double> values(static_cast<std::size_t>(p) * s);
  kernels().gemm_nn(values.data(), a->values.data(), b->values.data(), p, q, s, false);

  auto result = out({p, s}, std::move(values), a->requires_grad || b->requires_grad);
  if (result->requires_grad) {
    record([a, b, result, p, q, s] {
      if (!out_grad_ready(result)) return;
      const double* g = result->grad.data();
      if (a->requires_grad) {
        a->ensure_grad();
        // dA = g * B^T
        kernels().gemm_nt(a->grad.data(), g, b->values.data(), p, s, q, true);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        // dB = A^T * g
        kernels().gemm_tn(b->grad.data(), a->values.data(), g, p, q, s, true);
      }
    });
  }
  return result;
}

TensorPtr Tape::add(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "add");
  std::vector<double> values(a->numel());
  kernels().vadd(static_cast<int>(a->numel()), a->values.data(), b->values.data(), values.data());
  auto result = out(a->shape, std::move(values), a->requires_grad || b->requires_grad);
  if (result->requires_grad) {
    record([a, b, result] {
      if (!out_grad_ready(result)) return;
      const int n = static_cast<int>(result->numel());
      if (a->requires_grad) {
        a->ensure_grad();
        kernels().axpy(n, 1.0, result->grad.data(), a->grad.data());
      }
      if (b->requires_grad) {
        b->ensure_grad();
        kernels().axpy(n, 1.0, result->grad.data(), b->grad.data());
      }
    });
  }
  return result;
}

TensorPtr Tape::add_rowvec(const TensorPtr& a, const TensorPtr& b) {
  if (!a->is_matrix() || b->numel() != static_cast<std::size_t>(a->cols())) {
    throw ShapeError("add_rowvec: shapes " + shape_to_string(a->shape) + " and " +
                     shape_to_string(b->shape) + " are not broadcastable");
  }
  const int r = a->rows(), c = a->cols();
  std::vector<double> values(a->numel());
  for (int i = 0; i < r; ++i) {
    kernels().vadd(c, a->values.data() + static_cast<std::size_t>(i) * c, b->values.data(),
                   values.data() + static_cast<std::size_t>(i) * c);
  }
  auto result = out(a->shape, std::move(values), a->requires_grad || b->requires_grad);
  if (result->requires_grad) {
    record([a, b, result, r, c] {
      if (!out_grad_ready(result)) return;
      if (a->requires_grad) {
        a->ensure_grad();
        kernels().axpy(r * c, 1.0, result->grad.data(), a->grad.data());
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int i = 0; i < r; ++i) {
          kernels().axpy(c, 1.0, result->grad.data() + static_cast<std::size_t>(i) * c,
                         b->grad.data());
        }
      }
    });
  }
  return result;
}

TensorPtr Tape::sub(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> values(a->numel());
  kernels().vsub(static_cast<int>(a->numel()), a->values.data(), b->values.data(), values.data());
  auto result = out(a->shape, std::move(values), a->requires_grad || b->requires_grad);
  if (result->requires_grad) {
    record([a, b, result] {
      if (!out_grad_ready(result)) return;
      const int n = static_cast<int>(result->numel());
      if (a->requires_grad) {
        a->ensure_grad();
        kernels().axpy(n, 1.0, result->grad.data(), a->grad.data());
      }
      if (b->requires_grad) {
        b->ensure_grad();
        kernels().axpy(n, -1.0, result->grad.data(), b->grad.data());
      }
    });
  }
  return result;
}

TensorPtr Tape::mul(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> values(a->numel());
  kernels().vmul(static_cast<int>(a->numel()), a->values.data(), b->values.data(), values.data());
  auto result = out(a->shape, std::move(values), a->requires_grad || b->requires_grad);
  if (result->requires_grad) {
    record([a, b, result] {
      if (!out_grad_ready(result)) return;
      const std::size_t n = result->numel();
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) a->grad[i] += result->grad[i] * b->values[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) b->grad[i] += result->grad[i] * a->values[i];
      }
    });
  }
  return result;
}

TensorPtr Tape::scale(const TensorPtr& a, double alpha) {
  std::vector<double> values(a->numel());
  kernels().vscale(static_cast<int>(a->numel()), alpha, a->values.data(), values.data());
  auto result = out(a->shape, std::move(values), a->requires_grad);
  if (result->requires_grad) {
    record([a, result, alpha] {
      if (!out_grad_ready(result)) return;
      a->ensure_grad();
      kernels().axpy(static_cast<int>(a->numel()), alpha, result->grad.data(), a->grad.data());
    });
  }
  return result;
}

TensorPtr Tape::add_scalar(const TensorPtr& a, double alpha) {
  std::vector<double> values(a->values);
  for (double& v : values) v += alpha;
  auto result = out(a->shape, std::move(values), a->requires_grad);
  if (result->requires_grad) {
    record([a, result] {
      if (!out_grad_ready(result)) return;
      a->ensure_grad();
      kernels().axpy(static_cast<int>(a->numel()), 1.0, result->grad.data(), a->grad.data());
    });
  }
  return result;
}

TensorPtr Tape::activate(const TensorPtr& x, Activation kind) {
  const int n = static_cast<int>(x->numel());
  std::vector<double> values(x->numel());
  switch (kind) {
    case Activation::Identity:
      values = x->values;
      break;
    case Activation::Relu:
      kernels().relu_fwd(n, x->values.data(), values.data());
      break;
    case Activation::Sigmoid:
      for (int i = 0; i < n; ++i) values[i] = 1.0 / (1.0 + std::exp(-x->values[i]));
      break;
    case Activation::Tanh:
      for (int i = 0; i < n; ++i) values[i] = std::tanh(x->values[i]);
      break;
  }
  auto result = out(x->shape, std::move(values), x->requires_grad);
  if (result->requires_grad) {
    record([x, result, kind, n] {
      if (!out_grad_ready(result)) return;
      x->ensure_grad();
      const double* g = result->grad.data();
      switch (kind) {
        case Activation::Identity:
          kernels().axpy(n, 1.0, g, x->grad.data());
          break;
        case Activation::Relu:
          kernels().relu_bwd(n, x->values.data(), g, x->grad.data());
          break;
        case Activation::Sigmoid:
          kernels().sigmoid_bwd(n, result->values.data(), g, x->grad.data());
          break;
        case Activation::Tanh:
          kernels().tanh_bwd(n, result->values.data(), g, x->grad.data());
          break;
      }
    });
  }
  return result;
}

TensorPtr Tape::exp(const TensorPtr& x) {
  std::vector<double> values(x->numel());
  for (std::size_t i = 0; i < x->numel(); ++i) values[i] = std::exp(x->values[i]);
  auto result = out(x->shape, std::move(values), x->requires_grad);
  if (result->requires_grad) {
    record([x, result] {
      if (!out_grad_ready(result)) return;
      x->ensure_grad();
      for (std::size_t i = 0; i < x->numel(); ++i)
        x->grad[i] += result->grad[i] * result->values[i];
    });
  }
  return result;
}

TensorPtr Tape::log(const TensorPtr& x) {
  std::vector<double> values(x->numel());
  for (std::size_t i = 0; i < x->numel(); ++i) {
    if (!(x->values[i] > 0.0)) {
      throw ContractError("log: non-positive input " + std::to_string(x->values[i]));
    }
    values[i] = std::log(x->values[i]);
  }
  auto result = out(x->shape, std::move(values), x->requires_grad);
  if (result->requires_grad) {
    record([x, result] {
      if (!out_grad_ready(result)) return;
      x->ensure_grad();
      for (std::size_t i = 0; i < x->numel(); ++i) x->grad[i] += result->grad[i] / x->values[i];
    });
  }
  return result;
}

TensorPtr Tape::softplus(const TensorPtr& x) {
  std::vector<double> values(x->numel());
  for (std::size_t i = 0; i < x->numel(); ++i) {
    const double v = x->values[i];
    // log1p(exp(v)) without overflow for large v
    values[i] = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  }
  auto result = out(x->shape, std::move(values), x->requires_grad);
  if (result->requires_grad) {
    record([x, result] {
      if (!out_grad_ready(result)) return;
      x->ensure_grad();
      for (std::size_t i = 0; i < x->numel(); ++i) {
        const double sig = 1.0 / (1.0 + std::exp(-x->values[i]));
        x->grad[i] += result->grad[i] * sig;
      }
    });
  }
  return result;
}

TensorPtr Tape::clamp_min(const TensorPtr& x, double floor) {
  std::vector<double> values(x->numel());
  for (std::size_t i = 0; i < x->numel(); ++i) values[i] = std::max(x->values[i], floor);
  auto result = out(x->shape, std::move(values), x->requires_grad);
  if (result->requires_grad) {
    record([x, result, floor] {
      if (!out_grad_ready(result)) return;
      x->ensure_grad();
      for (std::size_t i = 0; i < x->numel(); ++i) {
        if (x->values[i] >= floor) x->grad[i] += result->grad[i];
      }
    });
  }
  return result;
}

TensorPtr Tape::softmax_logprobs(const TensorPtr& logits) {
  if (!logits->is_matrix()) {
    throw ShapeError("softmax_logprobs: expected [batch x classes], got " +
                     shape_to_string(logits->shape));
  }
  const int r = logits->rows(), c = logits->cols();
  std::vector<double> values(logits->numel());
  for (int i = 0; i < r; ++i) {
    const double* row = logits->values.data() + static_cast<std::size_t>(i) * c;
    double* orow = values.data() + static_cast<std::size_t>(i) * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    const double lse = std::log(denom);
    for (int j = 0; j < c; ++j) orow[j] = (row[j] - mx) - lse;
  }
  auto result = out(logits->shape, std::move(values), logits->requires_grad);
  if (result->requires_grad) {
    record([logits, result, r, c] {
      if (!out_grad_ready(result)) return;
      logits->ensure_grad();
      for (int i = 0; i < r; ++i) {
        const double* g = result->grad.data() + static_cast<std::size_t>(i) * c;
        const double* lp = result->values.data() + static_cast<std::size_t>(i) * c;
        double* gx = logits->grad.data() + static_cast<std::size_t>(i) * c;
        double gsum = 0.0;
        for (int j = 0; j < c; ++j) gsum += g[j];
        for (int j = 0; j < c; ++j) gx[j] += g[j] - std::exp(lp[j]) * gsum;
      }
    });
  }
  return result;
}

TensorPtr Tape::sum(const TensorPtr& x) {
  const double total = kernels().vsum(static_cast<int>(x->numel()), x->values.data());
  auto result = out({1}, {total}, x->requires_grad);
  if (result->requires_grad) {
    record([x, result] {
      if (!out_grad_ready(result)) return;
      x->ensure_grad();
      const double g = result->grad[0];
      for (std::size_t i = 0; i < x->numel(); ++i) x->grad[i] += g;
    });
  }
  return result;
}

TensorPtr Tape::mean(const TensorPtr& x) {
  if (x->numel() == 0) throw ContractError("mean: empty tensor");
  const double inv = 1.0 / static_cast<double>(x->numel());
  const double total = kernels().vsum(static_cast<int>(x->numel()), x->values.data());
  auto result = out({1}, {total * inv}, x->requires_grad);
  if (result->requires_grad) {
    record([x, result, inv] {
      if (!out_grad_ready(result)) return;
      x->ensure_grad();
      const double g = result->grad[0] * inv;
      for (std::size_t i = 0; i < x->numel(); ++i) x->grad[i] += g;
    });
  }
  return result;
}

TensorPtr Tape::gather_labels(const TensorPtr& x, const std::vector<int>& labels) {
  const int r = x->rows(), c = x->cols();
  if (static_cast<int>(labels.size()) != r) {
    throw ShapeError("gather_labels: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(r) + " rows");
  }
  std::vector<double> values(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    if (labels[i] < 0 || labels[i] >= c) {
      throw ContractError("gather_labels: label " + std::to_string(labels[i]) +
                          " out of range [0, " + std::to_string(c) + ")");
    }
    values[static_cast<std::size_t>(i)] = x->at(i, labels[i]);
  }
  auto result = out({r, 1}, std::move(values), x->requires_grad);
  if (result->requires_grad) {
    auto labels_copy = labels;
    record([x, result, labels_copy, c] {
      if (!out_grad_ready(result)) return;
      x->ensure_grad();
      for (std::size_t i = 0; i < labels_copy.size(); ++i) {
        x->grad[i * c + labels_copy[i]] += result->grad[i];
      }
    });
  }
  return result;
}

TensorPtr Tape::frob_inner(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "frob_inner");
  const double total =
      kernels().dot(static_cast<int>(a->numel()), a->values.data(), b->values.data());
  auto result = out({1}, {total}, a->requires_grad || b->requires_grad);
  if (result->requires_grad) {
    record([a, b, result] {
      if (!out_grad_ready(result)) return;
      const double g = result->grad[0];
      const int n = static_cast<int>(a->numel());
      if (a->requires_grad) {
        a->ensure_grad();
        kernels().axpy(n, g, b->values.data(), a->grad.data());
      }
      if (b->requires_grad) {
        b->ensure_grad();
        kernels().axpy(n, g, a->values.data(), b->grad.data());
      }
    });
  }
  return result;
}

TensorPtr Tape::pairwise_sqdist(const TensorPtr& x) {
  const int n = x->rows(), q = x->cols();
  std::vector<double> values(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* xi = x->values.data() + static_cast<std::size_t>(i) * q;
    for (int j = i + 1; j < n; ++j) {
      const double* xj = x->values.data() + static_cast<std::size_t>(j) * q;
      double d = 0.0;
      for (int k = 0; k < q; ++k) {
        const double diff = xi[k] - xj[k];
        d += diff * diff;
      }
      values[static_cast<std::size_t>(i) * n + j] = d;
      values[static_cast<std::size_t>(j) * n + i] = d;
    }
  }
  auto result = out({n, n}, std::move(values), x->requires_grad);
  if (result->requires_grad) {
    record([x, result, n, q] {
      if (!out_grad_ready(result)) return;
      x->ensure_grad();
      for (int i = 0; i < n; ++i) {
        const double* xi = x->values.data() + static_cast<std::size_t>(i) * q;
        double* gi = x->grad.data() + static_cast<std::size_t>(i) * q;
        for (int j = 0; j < n; ++j) {
          if (i == j) continue;
          const double w = 2.0 * (result->grad[static_cast<std::size_t>(i) * n + j] +
                                  result->grad[static_cast<std::size_t>(j) * n + i]);
          if (w == 0.0) continue;
          const double* xj = x->values.data() + static_cast<std::size_t>(j) * q;
          for (int k = 0; k < q; ++k) gi[k] += w * (xi[k] - xj[k]);
        }
      }
    });
  }
  return result;
}

TensorPtr Tape::double_center(const TensorPtr& x) {
  const int n = x->rows();
  if (x->cols() != n) {
    throw ShapeError("double_center: expected square matrix, got " + shape_to_string(x->shape));
  }
  // Centering is linear and self-adjoint, so backward reuses this routine.
  auto center = [n](const std::vector<double>& src, std::vector<double>& dst) {
    std::vector<double> rowm(n, 0.0), colm(n, 0.0);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const double v = src[static_cast<std::size_t>(i) * n + j];
        rowm[i] += v;
        colm[j] += v;
        total += v;
      }
    }
    // direct division: an all-ones kernel must center to an exact zero
    const double count = static_cast<double>(n);
    for (int i = 0; i < n; ++i) rowm[i] /= count;
    for (int j = 0; j < n; ++j) colm[j] /= count;
    total /= count * count;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        dst[static_cast<std::size_t>(i) * n + j] =
            src[static_cast<std::size_t>(i) * n + j] - rowm[i] - colm[j] + total;
      }
    }
  };
  std::vector<double> values(x->numel());
  center(x->values, values);
  auto result = out(x->shape, std::move(values), x->requires_grad);
  if (result->requires_grad) {
    record([x, result, center] {
      if (!out_grad_ready(result)) return;
      x->ensure_grad();
      std::vector<double> g(result->grad.size());
      center(result->grad, g);
      kernels().axpy(static_cast<int>(g.size()), 1.0, g.data(), x->grad.data());
    });
  }
  return result;
}

void Tape::backward(const TensorPtr& loss) {
  if (!loss->is_scalar()) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_to_string(loss->shape));
  }
  if (!loss->requires_grad) {
    throw ContractError("backward: loss is not connected to any tensor with requires_grad");
  }
  // Leaves accumulate across repeated calls; op outputs restart from zero so
  // a replay propagates exactly one unit of seed.
  for (auto& t : outputs_) t->zero_grad();
  loss->ensure_grad();
  loss->grad[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

SgdOptimizer::SgdOptimizer(std::vector<TensorPtr> params, double lr, double momentum)
    : params_(std::move(params)), lr_(lr), momentum_(momentum) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p->numel(), 0.0);
}

void SgdOptimizer::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    if (!p.has_grad()) {
      throw ContractError("sgd_step: parameter " + std::to_string(i) + " has no gradient");
    }
    kernels().sgd_update(static_cast<int>(p.numel()), p.values.data(), velocity_[i].data(),
                         p.grad.data(), lr_, momentum_);
    p.zero_grad();
  }
}

void sgd_step(const std::vector<TensorPtr>& params, double lr, double momentum) {
  SgdOptimizer opt(params, lr, momentum);
  opt.step();
}

double gradcheck(const std::function<TensorPtr(Tape&, const TensorPtr&)>& fn,
                 const Tensor& probe) {
  if (probe.numel() > 64) {
    throw ContractError("gradcheck: probe has " + std::to_string(probe.numel()) +
                        " elements, limit is 64");
  }
  Tape tape;
  auto x = make_leaf(probe.shape, probe.values, true);
  auto loss = fn(tape, x);
  if (!loss->is_scalar()) throw ContractError("gradcheck: function must return a scalar");
  tape.backward(loss);
  x->ensure_grad();
  const std::vector<double> analytic = x->grad;

  const double h = 1e-5;
  auto eval = [&fn](const Tensor& probe_values) {
    Tape fresh;
    auto leaf = make_leaf(probe_values.shape, probe_values.values, false);
    return fn(fresh, leaf)->values[0];
  };

  double worst = 0.0;
  Tensor work = probe;
  for (std::size_t i = 0; i < probe.numel(); ++i) {
    const double saved = work.values[i];
    work.values[i] = saved + h;
    const double up = eval(work);
    work.values[i] = saved - h;
    const double down = eval(work);
    work.values[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1.0});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace invlab
