#include "invlab/kernels.hpp"

// Reference kernels. These define the numeric semantics every other backend
// must reproduce bit-for-bit; keep loop structure and accumulation order in
// sync with the SIMD variants.

namespace invlab {
namespace {

void gemm_nn_scalar(double* c, const double* a, const double* b, int p, int q,
                    int s, bool accumulate) {
  for (int i = 0; i < p; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * s;
    if (!accumulate) {
      for (int j = 0; j < s; ++j) crow[j] = 0.0;
    }
    for (int k = 0; k < q; ++k) {
      const double av = a[static_cast<std::size_t>(i) * q + k];
      const double* brow = b + static_cast<std::size_t>(k) * s;
      for (int j = 0; j < s; ++j) crow[j] += av * brow[j];
    }
  }
}

// Striped 4-lane dot; the lane layout mirrors a 4-wide vector register.
double dot_striped(int n, const double* x, const double* y) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  const int body = n - (n % 4);
  for (int i = 0; i < body; i += 4) {
    acc[0] += x[i] * y[i];
    acc[1] += x[i + 1] * y[i + 1];
    acc[2] += x[i + 2] * y[i + 2];
    acc[3] += x[i + 3] * y[i + 3];
  }
  for (int i = body; i < n; ++i) acc[i % 4] += x[i] * y[i];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

double sum_striped(int n, const double* x) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  const int body = n - (n % 4);
  for (int i = 0; i < body; i += 4) {
    acc[0] += x[i];
    acc[1] += x[i + 1];
    acc[2] += x[i + 2];
    acc[3] += x[i + 3];
  }
  for (int i = body; i < n; ++i) acc[i % 4] += x[i];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

void gemm_nt_scalar(double* c, const double* a, const double* b, int p, int q,
                    int s, bool accumulate) {
  for (int i = 0; i < p; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * q;
    double* crow = c + static_cast<std::size_t>(i) * s;
    for (int j = 0; j < s; ++j) {
      const double d = dot_striped(q, arow, b + static_cast<std::size_t>(j) * q);
      crow[j] = accumulate ? crow[j] + d : d;
    }
  }
}

void gemm_tn_scalar(double* c, const double* a, const double* b, int p, int q,
                    int s, bool accumulate) {
  if (!accumulate) {
    for (std::size_t idx = 0; idx < static_cast<std::size_t>(q) * s; ++idx) c[idx] = 0.0;
  }
  for (int i = 0; i < p; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * q;
    const double* brow = b + static_cast<std::size_t>(i) * s;
    for (int k = 0; k < q; ++k) {
      const double av = arow[k];
      double* crow = c + static_cast<std::size_t>(k) * s;
      for (int j = 0; j < s; ++j) crow[j] += av * brow[j];
    }
  }
}

void axpy_scalar(int n, double alpha, const double* x, double* y) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void vadd_scalar(int n, const double* a, const double* b, double* dst) {
  for (int i = 0; i < n; ++i) dst[i] = a[i] + b[i];
}

void vsub_scalar(int n, const double* a, const double* b, double* dst) {
  for (int i = 0; i < n; ++i) dst[i] = a[i] - b[i];
}

void vmul_scalar(int n, const double* a, const double* b, double* dst) {
  for (int i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

void vscale_scalar(int n, double alpha, const double* x, double* dst) {
  for (int i = 0; i < n; ++i) dst[i] = alpha * x[i];
}

void relu_fwd_scalar(int n, const double* x, double* y) {
  for (int i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd_scalar(int n, const double* x, const double* g, double* gx) {
  for (int i = 0; i < n; ++i) {
    if (x[i] > 0.0) gx[i] += g[i];
  }
}

void tanh_bwd_scalar(int n, const double* y, const double* g, double* gx) {
  for (int i = 0; i < n; ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
}

void sigmoid_bwd_scalar(int n, const double* y, const double* g, double* gx) {
  for (int i = 0; i < n; ++i) gx[i] += g[i] * (y[i] * (1.0 - y[i]));
}

void sgd_update_scalar(int n, double* p, double* v, const double* g, double lr,
                       double momentum) {
  for (int i = 0; i < n; ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= lr * v[i];
  }
}

void clamp_box_scalar(int n, double* x, const double* lo, const double* hi) {
  for (int i = 0; i < n; ++i) {
    if (x[i] < lo[i]) x[i] = lo[i];
    if (x[i] > hi[i]) x[i] = hi[i];
  }
}

const KernelTable kScalarTable = {
    "scalar",         gemm_nn_scalar, gemm_nt_scalar,     gemm_tn_scalar,
    axpy_scalar,      vadd_scalar,    vsub_scalar,        vmul_scalar,
    vscale_scalar,    dot_striped,    sum_striped,        relu_fwd_scalar,
    relu_bwd_scalar,  tanh_bwd_scalar, sigmoid_bwd_scalar, sgd_update_scalar,
    clamp_box_scalar,
};

}  // namespace

const KernelTable& scalar_kernels() { return kScalarTable; }

}  // namespace invlab
