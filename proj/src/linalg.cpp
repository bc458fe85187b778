#include "invlab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "invlab/kernels.hpp"

namespace invlab {

Mat::Mat(int r, int c, std::vector<double> data) : rows(r), cols(c), v(std::move(data)) {
  if (v.size() != static_cast<std::size_t>(r) * c) {
    throw ShapeError("Mat: " + std::to_string(v.size()) + " values for " + std::to_string(r) +
                     "x" + std::to_string(c));
  }
}

Mat Mat::identity(int n) {
  Mat m(n, n);
  for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) {
    throw ShapeError("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                     " times " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
  Mat c(a.rows, b.cols);
  kernels().gemm_nn(c.v.data(), a.v.data(), b.v.data(), a.rows, a.cols, b.cols, false);
  return c;
}

Mat transpose(const Mat& a) {
  Mat t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

namespace {

// One-sided Jacobi on a tall matrix: columns are orthogonalized by plane
// rotations; the accumulated rotations form V and the column norms the
// singular values. Columns are kept contiguous so the dot products hit the
// fast kernels. Assumes a.rows >= a.cols.
SvdResult jacobi_core(const Mat& a) {
  const int m = a.rows, n = a.cols;
  std::vector<std::vector<double>> col(n, std::vector<double>(m));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) col[j][static_cast<std::size_t>(i)] = a.at(i, j);
  std::vector<std::vector<double>> vcol(n, std::vector<double>(n, 0.0));
  for (int j = 0; j < n; ++j) vcol[j][static_cast<std::size_t>(j)] = 1.0;

  const double eps = std::numeric_limits<double>::epsilon();
  const int max_sweeps = 60;
  std::vector<double> norm2(n);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    // Refresh cached squared norms once per sweep; within a sweep they are
    // maintained by the 2x2 diagonalization identities.
    for (int j = 0; j < n; ++j) norm2[j] = kernels().dot(m, col[j].data(), col[j].data());
    bool rotated = false;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double* cp = col[p].data();
        double* cq = col[q].data();
        const double alpha = norm2[p];
        const double beta = norm2[q];
        const double gamma = kernels().dot(m, cp, cq);
        if (gamma == 0.0 || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int i = 0; i < m; ++i) {
          const double wp = cp[i], wq = cq[i];
          cp[i] = c * wp - s * wq;
          cq[i] = s * wp + c * wq;
        }
        norm2[p] = alpha - t * gamma;
        norm2[q] = beta + t * gamma;
        double* vp = vcol[p].data();
        double* vq = vcol[q].data();
        for (int i = 0; i < n; ++i) {
          const double a0 = vp[i], b0 = vq[i];
          vp[i] = c * a0 - s * b0;
          vq[i] = s * a0 + c * b0;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(n);
  for (int j = 0; j < n; ++j) sigma[j] = std::sqrt(kernels().dot(m, col[j].data(), col[j].data()));

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return sigma[a] > sigma[b]; });

  SvdResult result;
  result.singular_values.resize(n);
  result.u = Mat(m, n);
  result.v = Mat(n, n);
  for (int jj = 0; jj < n; ++jj) {
    const int j = order[jj];
    result.singular_values[jj] = sigma[j];
    const double inv = sigma[j] > 0.0 ? 1.0 / sigma[j] : 0.0;
    for (int i = 0; i < m; ++i) result.u.at(i, jj) = col[j][static_cast<std::size_t>(i)] * inv;
    for (int i = 0; i < n; ++i) result.v.at(i, jj) = vcol[j][static_cast<std::size_t>(i)];
  }
  return result;
}

}  // namespace

SvdResult jacobi_svd(const Mat& a) {
  for (double x : a.v) {
    if (!std::isfinite(x)) throw ContractError("jacobi_svd: matrix has non-finite entries");
  }
  if (a.rows >= a.cols) return jacobi_core(a);
  // Wide matrix: factor the transpose and swap the roles of U and V.
  SvdResult t = jacobi_core(transpose(a));
  SvdResult result;
  result.singular_values = std::move(t.singular_values);
  result.u = std::move(t.v);
  result.v = std::move(t.u);
  return result;
}

namespace {
double rank_tolerance(const Mat& a, const SvdResult& svd, std::optional<double> tol) {
  if (tol.has_value()) return *tol;
  const double smax = svd.singular_values.empty() ? 0.0 : svd.singular_values.front();
  return std::max(a.rows, a.cols) * std::numeric_limits<double>::epsilon() * smax;
}
}  // namespace

int matrix_rank(const Mat& a, std::optional<double> tol) {
  if (a.rows == 0 || a.cols == 0) return 0;
  const SvdResult svd = jacobi_svd(a);
  const double cutoff = rank_tolerance(a, svd, tol);
  int rank = 0;
  for (double s : svd.singular_values) {
    if (s > cutoff) ++rank;
  }
  return rank;
}

int nullity(const Mat& a, std::optional<double> tol) { return a.cols - matrix_rank(a, tol); }

Mat null_space(const Mat& a, std::optional<double> tol) {
  const SvdResult svd = jacobi_svd(a);
  const double cutoff = rank_tolerance(a, svd, tol);
  int rank = 0;
  for (double s : svd.singular_values) {
    if (s > cutoff) ++rank;
  }
  const int k = static_cast<int>(svd.singular_values.size());
  // Right singular vectors below the cutoff span the numerical null space.
  // When cols > rows the SVD carries only min(m,n) directions; the rest of
  // the null space is completed by Gram-Schmidt against the known vectors.
  const int dim = a.cols - rank;
  Mat basis(a.cols, dim);
  int filled = 0;
  for (int j = rank; j < k && filled < dim; ++j, ++filled) {
    for (int i = 0; i < a.cols; ++i) basis.at(i, filled) = svd.v.at(i, j);
  }
  if (filled < dim) {
    // Complete the basis: orthogonalize coordinate vectors against all known
    // right singular vectors and already-accepted columns.
    std::vector<std::vector<double>> known;
    for (int j = 0; j < k; ++j) {
      std::vector<double> col(a.cols);
      for (int i = 0; i < a.cols; ++i) col[i] = svd.v.at(i, j);
      known.push_back(std::move(col));
    }
    for (int j = 0; j < filled; ++j) {
      std::vector<double> col(a.cols);
      for (int i = 0; i < a.cols; ++i) col[i] = basis.at(i, j);
      known.push_back(std::move(col));
    }
    for (int e = 0; e < a.cols && filled < dim; ++e) {
      std::vector<double> cand(a.cols, 0.0);
      cand[e] = 1.0;
      for (const auto& u : known) {
        double proj = 0.0;
        for (int i = 0; i < a.cols; ++i) proj += cand[i] * u[i];
        for (int i = 0; i < a.cols; ++i) cand[i] -= proj * u[i];
      }
      double norm = 0.0;
      for (double x : cand) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-8) continue;
      for (int i = 0; i < a.cols; ++i) cand[i] /= norm;
      for (int i = 0; i < a.cols; ++i) basis.at(i, filled) = cand[i];
      known.push_back(std::move(cand));
      ++filled;
    }
  }
  return basis;
}

double spectral_norm(const Mat& a) {
  const SvdResult svd = jacobi_svd(a);
  return svd.singular_values.empty() ? 0.0 : svd.singular_values.front();
}

}  // namespace invlab
