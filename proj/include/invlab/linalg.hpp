#pragma once

#include <optional>
#include <vector>

#include "invlab/errors.hpp"

namespace invlab {

/// Plain row-major matrix for numerical analysis outside the autodiff graph.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}
  Mat(int r, int c, std::vector<double> data);

  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }

  static Mat identity(int n);
};

Mat matmul(const Mat& a, const Mat& b);
Mat transpose(const Mat& a);

struct SvdResult {
  std::vector<double> singular_values;  // descending
  Mat u;                                // rows(a) x k, k = min(rows, cols)
  Mat v;                                // cols(a) x k, columns are right singular vectors
};

/// One-sided Jacobi SVD. Accurate for the desk-scale matrices used here
/// (hundreds of rows/columns); cost is O(min(m,n)^2 * max(m,n)) per sweep.
SvdResult jacobi_svd(const Mat& a);

/// Number of singular values above tol. Default tol follows the usual
/// numerical-rank convention: max(rows, cols) * eps * sigma_max.
int matrix_rank(const Mat& a, std::optional<double> tol = std::nullopt);

/// cols(a) - matrix_rank(a)
int nullity(const Mat& a, std::optional<double> tol = std::nullopt);

/// Orthonormal basis of {x : a x = 0}; one column per null direction.
Mat null_space(const Mat& a, std::optional<double> tol = std::nullopt);

/// Largest singular value (spectral norm).
double spectral_norm(const Mat& a);

}  // namespace invlab
