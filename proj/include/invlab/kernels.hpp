#pragma once

#include <cstddef>

namespace invlab {

// Dense double-precision inner loops behind the tensor engine. Every entry
// has a scalar reference implementation and may have SIMD variants; the
// active table is chosen once at startup from CPU capabilities.
//
// Backend equivalence is bit-exact, not approximate. Two rules make that
// possible:
//   * multiply-accumulate is expressed as separate mul and add (the build
//     sets -ffp-contract=off so the scalar path cannot be fused either);
//   * reductions (dot, sum) accumulate into four striped lanes, lane = i mod 4,
//     combined as (l0+l1)+(l2+l3). The scalar reference uses the same
//     stripes, so a 4-wide vector backend reproduces it exactly.
struct KernelTable {
  const char* name;

  // c = a[p x q] * b[q x s], or += when accumulate is set.
  void (*gemm_nn)(double* c, const double* a, const double* b, int p, int q,
                  int s, bool accumulate);
  // c = a[p x q] * b[s x q]^T  (c is p x s)
  void (*gemm_nt)(double* c, const double* a, const double* b, int p, int q,
                  int s, bool accumulate);
  // c = a[p x q]^T * b[p x s]  (c is q x s)
  void (*gemm_tn)(double* c, const double* a, const double* b, int p, int q,
                  int s, bool accumulate);

  void (*axpy)(int n, double alpha, const double* x, double* y);  // y += alpha*x
  void (*vadd)(int n, const double* a, const double* b, double* dst);
  void (*vsub)(int n, const double* a, const double* b, double* dst);
  void (*vmul)(int n, const double* a, const double* b, double* dst);
  void (*vscale)(int n, double alpha, const double* x, double* dst);

  double (*dot)(int n, const double* x, const double* y);
  double (*vsum)(int n, const double* x);

  void (*relu_fwd)(int n, const double* x, double* y);
  // gx += g * [x > 0]
  void (*relu_bwd)(int n, const double* x, const double* g, double* gx);
  // gx += g * (1 - y^2), y = tanh(x) from the forward pass
  void (*tanh_bwd)(int n, const double* y, const double* g, double* gx);
  // gx += g * y * (1 - y), y = sigmoid(x) from the forward pass
  void (*sigmoid_bwd)(int n, const double* y, const double* g, double* gx);

  // v = momentum*v + g; p -= lr*v
  void (*sgd_update)(int n, double* p, double* v, const double* g, double lr,
                     double momentum);
  // x = min(max(x, lo), hi), elementwise bounds
  void (*clamp_box)(int n, double* x, const double* lo, const double* hi);
};

/// Scalar reference kernels; always available.
const KernelTable& scalar_kernels();

/// AVX2 kernels, or nullptr when unsupported (at compile or run time).
const KernelTable* avx2_kernels();

/// The runtime-selected table. Honors INVLAB_KERNELS=scalar|avx2 when set.
const KernelTable& kernels();

}  // namespace invlab
