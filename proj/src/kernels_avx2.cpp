#include "invlab/kernels.hpp"

// AVX2 variants. Multiply and add stay separate (no FMA) and reductions use
// the documented 4-lane stripes, so every result is bit-identical to the
// scalar reference.

#if defined(__AVX2__)

#include <immintrin.h>

namespace invlab {
namespace {

inline double reduce_lanes(__m256d acc) {
  const __m128d lo = _mm256_castpd256_pd128(acc);   // lanes 0,1
  const __m128d hi = _mm256_extractf128_pd(acc, 1); // lanes 2,3
  const double l0 = _mm_cvtsd_f64(lo);
  const double l1 = _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
  const double l2 = _mm_cvtsd_f64(hi);
  const double l3 = _mm_cvtsd_f64(_mm_unpackhi_pd(hi, hi));
  return (l0 + l1) + (l2 + l3);
}

void gemm_nn_avx2(double* c, const double* a, const double* b, int p, int q,
                  int s, bool accumulate) {
  const int body = s - (s % 4);
  for (int i = 0; i < p; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * s;
    if (!accumulate) {
      for (int j = 0; j < s; ++j) crow[j] = 0.0;
    }
    for (int k = 0; k < q; ++k) {
      const double av = a[static_cast<std::size_t>(i) * q + k];
      const __m256d avv = _mm256_set1_pd(av);
      const double* brow = b + static_cast<std::size_t>(k) * s;
      int j = 0;
      for (; j < body; j += 4) {
        const __m256d prod = _mm256_mul_pd(avv, _mm256_loadu_pd(brow + j));
        _mm256_storeu_pd(crow + j, _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
      }
      for (; j < s; ++j) crow[j] += av * brow[j];
    }
  }
}

double dot_avx2(int n, const double* x, const double* y) {
  __m256d acc = _mm256_setzero_pd();
  const int body = n - (n % 4);
  int i = 0;
  for (; i < body; i += 4) {
    const __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    acc = _mm256_add_pd(acc, prod);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  for (; i < n; ++i) lanes[i % 4] += x[i] * y[i];
  return (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
}

double vsum_avx2(int n, const double* x) {
  __m256d acc = _mm256_setzero_pd();
  const int body = n - (n % 4);
  int i = 0;
  for (; i < body; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  for (; i < n; ++i) lanes[i % 4] += x[i];
  return (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
}

void gemm_nt_avx2(double* c, const double* a, const double* b, int p, int q,
                  int s, bool accumulate) {
  for (int i = 0; i < p; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * q;
    double* crow = c + static_cast<std::size_t>(i) * s;
    for (int j = 0; j < s; ++j) {
      const double d = dot_avx2(q, arow, b + static_cast<std::size_t>(j) * q);
      crow[j] = accumulate ? crow[j] + d : d;
    }
  }
}

void gemm_tn_avx2(double* c, const double* a, const double* b, int p, int q,
                  int s, bool accumulate) {
  if (!accumulate) {
    for (std::size_t idx = 0; idx < static_cast<std::size_t>(q) * s; ++idx) c[idx] = 0.0;
  }
  const int body = s - (s % 4);
  for (int i = 0; i < p; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * q;
    const double* brow = b + static_cast<std::size_t>(i) * s;
    for (int k = 0; k < q; ++k) {
      const double av = arow[k];
      const __m256d avv = _mm256_set1_pd(av);
      double* crow = c + static_cast<std::size_t>(k) * s;
      int j = 0;
      for (; j < body; j += 4) {
        const __m256d prod = _mm256_mul_pd(avv, _mm256_loadu_pd(brow + j));
        _mm256_storeu_pd(crow + j, _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
      }
      for (; j < s; ++j) crow[j] += av * brow[j];
    }
  }
}

void axpy_avx2(int n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  const int body = n - (n % 4);
  int i = 0;
  for (; i < body; i += 4) {
    const __m256d prod = _mm256_mul_pd(av, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void vadd_avx2(int n, const double* a, const double* b, double* dst) {
  const int body = n - (n % 4);
  int i = 0;
  for (; i < body; i += 4)
    _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) dst[i] = a[i] + b[i];
}

void vsub_avx2(int n, const double* a, const double* b, double* dst) {
  const int body = n - (n % 4);
  int i = 0;
  for (; i < body; i += 4)
    _mm256_storeu_pd(dst + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) dst[i] = a[i] - b[i];
}

void vmul_avx2(int n, const double* a, const double* b, double* dst) {
  const int body = n - (n % 4);
  int i = 0;
  for (; i < body; i += 4)
    _mm256_storeu_pd(dst + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) dst[i] = a[i] * b[i];
}

void vscale_avx2(int n, double alpha, const double* x, double* dst) {
  const __m256d av = _mm256_set1_pd(alpha);
  const int body = n - (n % 4);
  int i = 0;
  for (; i < body; i += 4)
    _mm256_storeu_pd(dst + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) dst[i] = alpha * x[i];
}

void relu_fwd_avx2(int n, const double* x, double* y) {
  const __m256d zero = _mm256_setzero_pd();
  const int body = n - (n % 4);
  int i = 0;
  for (; i < body; i += 4)
    _mm256_storeu_pd(y + i, _mm256_max_pd(zero, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd_avx2(int n, const double* x, const double* g, double* gx) {
  const __m256d zero = _mm256_setzero_pd();
  const int body = n - (n % 4);
  int i = 0;
  for (; i < body; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    const __m256d contrib = _mm256_and_pd(mask, _mm256_loadu_pd(g + i));
    _mm256_storeu_pd(gx + i, _mm256_add_pd(_mm256_loadu_pd(gx + i), contrib));
  }
  for (; i < n; ++i) {
    if (x[i] > 0.0) gx[i] += g[i];
  }
}

void tanh_bwd_avx2(int n, const double* y, const double* g, double* gx) {
  const __m256d one = _mm256_set1_pd(1.0);
  const int body = n - (n % 4);
  int i = 0;
  for (; i < body; i += 4) {
    const __m256d yv = _mm256_loadu_pd(y + i);
    const __m256d deriv = _mm256_sub_pd(one, _mm256_mul_pd(yv, yv));
    const __m256d contrib = _mm256_mul_pd(_mm256_loadu_pd(g + i), deriv);
    _mm256_storeu_pd(gx + i, _mm256_add_pd(_mm256_loadu_pd(gx + i), contrib));
  }
  for (; i < n; ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
}

void sigmoid_bwd_avx2(int n, const double* y, const double* g, double* gx) {
  const __m256d one = _mm256_set1_pd(1.0);
  const int body = n - (n % 4);
  int i = 0;
  for (; i < body; i += 4) {
    const __m256d yv = _mm256_loadu_pd(y + i);
    const __m256d deriv = _mm256_mul_pd(yv, _mm256_sub_pd(one, yv));
    const __m256d contrib = _mm256_mul_pd(_mm256_loadu_pd(g + i), deriv);
    _mm256_storeu_pd(gx + i, _mm256_add_pd(_mm256_loadu_pd(gx + i), contrib));
  }
  for (; i < n; ++i) gx[i] += g[i] * (y[i] * (1.0 - y[i]));
}

void sgd_update_avx2(int n, double* p, double* v, const double* g, double lr,
                     double momentum) {
  const __m256d momv = _mm256_set1_pd(momentum);
  const __m256d lrv = _mm256_set1_pd(lr);
  const int body = n - (n % 4);
  int i = 0;
  for (; i < body; i += 4) {
    const __m256d vnew =
        _mm256_add_pd(_mm256_mul_pd(momv, _mm256_loadu_pd(v + i)), _mm256_loadu_pd(g + i));
    _mm256_storeu_pd(v + i, vnew);
    const __m256d pnew = _mm256_sub_pd(_mm256_loadu_pd(p + i), _mm256_mul_pd(lrv, vnew));
    _mm256_storeu_pd(p + i, pnew);
  }
  for (; i < n; ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= lr * v[i];
  }
}

void clamp_box_avx2(int n, double* x, const double* lo, const double* hi) {
  const int body = n - (n % 4);
  int i = 0;
  for (; i < body; i += 4) {
    __m256d xv = _mm256_loadu_pd(x + i);
    xv = _mm256_max_pd(xv, _mm256_loadu_pd(lo + i));
    xv = _mm256_min_pd(xv, _mm256_loadu_pd(hi + i));
    _mm256_storeu_pd(x + i, xv);
  }
  for (; i < n; ++i) {
    if (x[i] < lo[i]) x[i] = lo[i];
    if (x[i] > hi[i]) x[i] = hi[i];
  }
}

const KernelTable kAvx2Table = {
    "avx2",        gemm_nn_avx2, gemm_nt_avx2,   gemm_tn_avx2,    axpy_avx2,
    vadd_avx2,     vsub_avx2,    vmul_avx2,      vscale_avx2,     dot_avx2,
    vsum_avx2,     relu_fwd_avx2, relu_bwd_avx2, tanh_bwd_avx2,   sigmoid_bwd_avx2,
    sgd_update_avx2, clamp_box_avx2,
};

}  // namespace

const KernelTable* avx2_compiled_table() { return &kAvx2Table; }

}  // namespace invlab

#else  // !__AVX2__

namespace invlab {
const KernelTable* avx2_compiled_table() { return nullptr; }
}  // namespace invlab

#endif
