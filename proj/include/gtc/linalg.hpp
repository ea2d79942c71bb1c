#pragma once

// Dense kernels: Householder QR (plain and column-pivoted), one-sided Jacobi
// SVD, power-iteration operator norm, interpolative row basis,
// pseudo-inverse and orthogonal projections.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "gtc/error.hpp"
#include "gtc/matrix.hpp"

namespace gtc::linalg {

struct SvdResult {
  Matrix left_basis;        ///< rows × k, orthonormal columns
  Vector singular_values;   ///< k values, non-increasing, non-negative
  Matrix right_basis;       ///< cols × k, orthonormal columns

  std::size_t rank() const noexcept { return singular_values.size(); }

  /// U·diag(s)·Vᵀ
  Matrix reconstruct() const {
    Matrix us = left_basis;
    for (std::size_t r = 0; r < us.rows(); ++r)
      for (std::size_t c = 0; c < us.cols(); ++c) us(r, c) *= singular_values[c];
    return us * right_basis.transpose();
  }
};

struct RowBasis {
  std::vector<std::size_t> indices;  ///< selected rows, in pivot order
  Matrix coeffs;                     ///< rows(m) × indices.size()
};

inline constexpr double kDefaultRankTol = 1e-9;
inline constexpr std::size_t kPowerIterationCap = 10000;

namespace detail {

/// Column-major scratch storage used by the factorizations.
struct ColMajor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  explicit ColMajor(const Matrix& m) : rows(m.rows()), cols(m.cols()), a(m.size()) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) a[c * rows + r] = m(r, c);
  }
  ColMajor(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

  double* col(std::size_t c) noexcept { return a.data() + c * rows; }
  const double* col(std::size_t c) const noexcept { return a.data() + c * rows; }

  Matrix to_matrix() const {
    Matrix m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) m(r, c) = a[c * rows + r];
    return m;
  }
};

inline double col_dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

/// Householder factorization state. Reflector k lives below the diagonal of
/// column k with an implicit leading 1.
struct Householder {
  ColMajor work;
  Vector tau;
  std::vector<std::size_t> perm;  // column permutation (identity if unpivoted)
  std::size_t steps = 0;

  explicit Householder(const Matrix& m) : work(m), perm(m.cols()) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
  }

  void reflect_column(std::size_t k) {
    const std::size_t m = work.rows;
    double* x = work.col(k) + k;
    const std::size_t len = m - k;
    const double norm = std::sqrt(col_dot(x, x, len));
    if (norm == 0.0) {
      tau.push_back(0.0);
      return;
    }
    const double beta = -std::copysign(norm, x[0]);
    const double v0 = x[0] - beta;
    for (std::size_t i = 1; i < len; ++i) x[i] /= v0;
    const double t = (beta - x[0]) / beta;
    x[0] = beta;
    tau.push_back(t);
    for (std::size_t j = k + 1; j < work.cols; ++j) {
      double* y = work.col(j) + k;
      double w = y[0];
      for (std::size_t i = 1; i < len; ++i) w += x[i] * y[i];
      w *= t;
      y[0] -= w;
      for (std::size_t i = 1; i < len; ++i) y[i] -= w * x[i];
    }
  }

  void swap_columns(std::size_t i, std::size_t j) {
    if (i == j) return;
    std::swap_ranges(work.col(i), work.col(i) + work.rows, work.col(j));
    std::swap(perm[i], perm[j]);
  }

  /// Thin Q with `steps` columns.
  Matrix thin_q() const {
    const std::size_t m = work.rows;
    ColMajor q(m, steps);
    for (std::size_t c = 0; c < steps; ++c) q.col(c)[c] = 1.0;
    for (std::size_t kk = steps; kk-- > 0;) {
      const double t = tau[kk];
      if (t == 0.0) continue;
      const double* v = work.col(kk) + kk;
      for (std::size_t c = 0; c < steps; ++c) {
        double* y = q.col(c) + kk;
        double w = y[0];
        for (std::size_t i = 1; i < m - kk; ++i) w += v[i] * y[i];
        w *= t;
        y[0] -= w;
        for (std::size_t i = 1; i < m - kk; ++i) y[i] -= w * v[i];
      }
    }
    return q.to_matrix();
  }

  /// Upper-trapezoidal R, `steps` × cols (in permuted column order).
  Matrix r_factor() const {
    Matrix r(steps, work.cols);
    for (std::size_t i = 0; i < steps; ++i)
      for (std::size_t j = i; j < work.cols; ++j) r(i, j) = work.col(j)[i];
    return r;
  }
};

/// One-sided (Hestenes) Jacobi on the columns of `w`, accumulating the
/// rotations into `v`. Requires w.rows >= w.cols.
inline void jacobi_orthogonalize(ColMajor& w, ColMajor& v) {
  const std::size_t m = w.rows;
  const std::size_t n = w.cols;
  const double tol =
      std::max(1e-15, static_cast<double>(m) * std::numeric_limits<double>::epsilon());
  constexpr int kMaxSweeps = 80;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* wp = w.col(p);
        double* wq = w.col(q);
        const double alpha = col_dot(wp, wp, m);
        const double beta = col_dot(wq, wq, m);
        const double gamma = col_dot(wp, wq, m);
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double a = wp[i];
          const double b = wq[i];
          wp[i] = c * a - s * b;
          wq[i] = s * a + c * b;
        }
        double* vp = v.col(p);
        double* vq = v.col(q);
        for (std::size_t i = 0; i < v.rows; ++i) {
          const double a = vp[i];
          const double b = vq[i];
          vp[i] = c * a - s * b;
          vq[i] = s * a + c * b;
        }
      }
    }
    if (!rotated) return;
  }
}

/// Replaces near-null columns of `q` (flagged in `fill`) with unit vectors
/// orthogonal to every other column, using Gram-Schmidt on the standard basis.
inline void complete_orthonormal(Matrix& q, const std::vector<bool>& fill) {
  const std::size_t m = q.rows();
  std::size_t candidate = 0;
  for (std::size_t c = 0; c < q.cols(); ++c) {
    if (!fill[c]) continue;
    for (; candidate < m; ++candidate) {
      Vector e(m, 0.0);
      e[candidate] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t o = 0; o < q.cols(); ++o) {
          if (o == c || (fill[o] && o > c)) continue;
          double s = 0.0;
          for (std::size_t r = 0; r < m; ++r) s += q(r, o) * e[r];
          for (std::size_t r = 0; r < m; ++r) e[r] -= s * q(r, o);
        }
      }
      const double nrm = norm2(e);
      if (nrm > 1e-6) {
        for (std::size_t r = 0; r < m; ++r) q(r, c) = e[r] / nrm;
        ++candidate;
        break;
      }
    }
  }
}

/// SVD of a matrix with rows >= cols.
inline SvdResult svd_tall(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();

  // QR preconditioning shrinks the Jacobi sweeps from length m to length n.
  Matrix q_factor;
  ColMajor w(a);
  if (m > n) {
    Householder qr(a);
    for (std::size_t k = 0; k < n; ++k) qr.reflect_column(k);
    qr.steps = n;
    q_factor = qr.thin_q();
    w = ColMajor(qr.r_factor());
  }

  ColMajor v(n, n);
  for (std::size_t i = 0; i < n; ++i) v.col(i)[i] = 1.0;
  jacobi_orthogonalize(w, v);

  Vector sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = std::sqrt(col_dot(w.col(j), w.col(j), w.rows));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  Matrix u_small(w.rows, n);
  Matrix right(n, n);
  Vector s_sorted(n);
  std::vector<bool> fill(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    s_sorted[k] = sigma[j];
    for (std::size_t i = 0; i < n; ++i) right(i, k) = v.col(j)[i];
    if (sigma[j] <= std::numeric_limits<double>::min()) {
      fill[k] = true;
      s_sorted[k] = 0.0;
      continue;
    }
    for (std::size_t i = 0; i < w.rows; ++i) u_small(i, k) = w.col(j)[i] / sigma[j];
  }
  complete_orthonormal(u_small, fill);

  Matrix left = m > n ? q_factor * u_small : u_small;
  return {std::move(left), std::move(s_sorted), std::move(right)};
}

}  // namespace detail

/// Flips singular-vector pairs so each left vector's largest-magnitude entry
/// (first one on ties) is positive.
inline void canonicalize_signs(SvdResult& s) {
  for (std::size_t c = 0; c < s.left_basis.cols(); ++c) {
    std::size_t best = 0;
    double best_abs = -1.0;
    for (std::size_t r = 0; r < s.left_basis.rows(); ++r) {
      const double v = std::abs(s.left_basis(r, c));
      if (v > best_abs) {
        best_abs = v;
        best = r;
      }
    }
    if (s.left_basis(best, c) < 0.0) {
      for (std::size_t r = 0; r < s.left_basis.rows(); ++r) s.left_basis(r, c) = -s.left_basis(r, c);
      for (std::size_t r = 0; r < s.right_basis.rows(); ++r)
        s.right_basis(r, c) = -s.right_basis(r, c);
    }
  }
}

/// Thin SVD with min(rows, cols) triplets, sign-canonicalized.
inline SvdResult svd(const Matrix& m) {
  if (m.empty()) throw ValidationError("svd of an empty matrix");
  SvdResult out;
  if (m.rows() >= m.cols()) {
    out = detail::svd_tall(m);
  } else {
    SvdResult t = detail::svd_tall(m.transpose());
    out.left_basis = std::move(t.right_basis);
    out.right_basis = std::move(t.left_basis);
    out.singular_values = std::move(t.singular_values);
    std::vector<bool> fill(out.left_basis.cols(), false);
    for (std::size_t k = 0; k < fill.size(); ++k) fill[k] = out.singular_values[k] == 0.0;
    detail::complete_orthonormal(out.left_basis, fill);
  }
  canonicalize_signs(out);
  return out;
}

/// Best rank-k approximation factors (Eckart–Young).
inline SvdResult truncated_svd(const Matrix& m, std::size_t k) {
  const std::size_t limit = std::min(m.rows(), m.cols());
  if (k < 1 || k > limit) {
    throw BoundsError("truncated_svd rank " + std::to_string(k) + " outside [1, " +
                      std::to_string(limit) + "]");
  }
  SvdResult full = svd(m);
  if (k == limit) return full;
  return {full.left_basis.left_cols(k),
          Vector(full.singular_values.begin(), full.singular_values.begin() + k),
          full.right_basis.left_cols(k)};
}

/// Number of singular values above rel_tol·‖m‖_F.
inline std::size_t numerical_rank(const Matrix& m, double rel_tol = kDefaultRankTol) {
  if (m.empty()) return 0;
  const double cutoff = rel_tol * frobenius_norm(m);
  const SvdResult s = svd(m);
  return static_cast<std::size_t>(std::count_if(s.singular_values.begin(), s.singular_values.end(),
                                                [&](double v) { return v > cutoff; }));
}

namespace detail {

struct PowerRun {
  double lambda = 0.0;  // squared norm estimate
  bool converged = false;
};

inline PowerRun power_iterate(const Matrix& m, Vector v, double tol, std::size_t max_iterations) {
  PowerRun run;
  double lambda_prev = -1.0;
  double delta_prev = 0.0;
  for (std::size_t it = 1; it <= max_iterations; ++it) {
    const Vector w = m * v;
    run.lambda = dot(w, w);
    const Vector z = transpose_times(m, Matrix(w.size(), 1, w)).values();
    const double nz = norm2(z);
    if (nz == 0.0) {
      run.converged = true;
      return run;
    }
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = z[i] / nz;

    const double delta = run.lambda - lambda_prev;
    if (it >= 3) {
      const double q = delta / delta_prev;
      const double tail = (q > 0.0 && q < 1.0) ? delta * q / (1.0 - q)
                                               : std::numeric_limits<double>::infinity();
      if (delta <= 0.0 || (delta <= tol * run.lambda && tail <= tol * run.lambda)) {
        run.converged = true;
        return run;
      }
    }
    lambda_prev = run.lambda;
    delta_prev = delta;
  }
  return run;
}

}  // namespace detail

/// Largest singular value by power iteration on mᵀm from the normalized
/// all-ones vector. Stops once the observed increments and their geometric
/// tail both fall below tol relative to the estimate.
///
/// A start vector orthogonal to the dominant direction converges to a smaller
/// singular value; that is detected against the largest row/column norm (both
/// lower bounds on the norm) and the iteration restarts from that row/axis.
inline double operator_norm(const Matrix& m, double tol = 1e-8,
                            std::size_t max_iterations = kPowerIterationCap) {
  if (m.empty()) throw ValidationError("operator_norm of an empty matrix");
  if (!(tol > 0.0 && tol <= 1e-2)) throw ValidationError("operator_norm tol must be in (0, 1e-2]");
  if (dot(m.values(), m.values()) == 0.0) return 0.0;

  const std::size_t n = m.cols();
  const Vector col_norms = column_norms(m);
  const auto heavy_col = static_cast<std::size_t>(
      std::max_element(col_norms.begin(), col_norms.end()) - col_norms.begin());
  std::size_t heavy_row = 0;
  double heavy_row_norm = -1.0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double nr = norm2(m.row(r));
    if (nr > heavy_row_norm) {
      heavy_row_norm = nr;
      heavy_row = r;
    }
  }
  const double floor2 = std::max(col_norms[heavy_col], heavy_row_norm) *
                        std::max(col_norms[heavy_col], heavy_row_norm);

  detail::PowerRun run =
      detail::power_iterate(m, Vector(n, 1.0 / std::sqrt(static_cast<double>(n))), tol,
                            max_iterations);
  if (run.converged && run.lambda < floor2 * (1.0 - 1e-12)) {
    Vector v(n, 0.0);
    if (heavy_row_norm >= col_norms[heavy_col]) {
      for (std::size_t i = 0; i < n; ++i) v[i] = m(heavy_row, i) / heavy_row_norm;
    } else {
      v[heavy_col] = 1.0;
    }
    run = detail::power_iterate(m, std::move(v), tol, max_iterations);
  }
  if (!run.converged) {
    throw ConvergenceError("operator_norm did not converge within " +
                               std::to_string(max_iterations) + " iterations",
                           std::sqrt(run.lambda), max_iterations);
  }
  return std::sqrt(run.lambda);
}

/// Interpolative row basis: rows `indices` of m span its row space up to
/// rank_tol·‖m‖_F, and coeffs·m[indices,:] reconstructs m. Built from
/// column-pivoted Householder QR of mᵀ.
inline RowBasis pivoted_row_basis(const Matrix& m, double rank_tol = kDefaultRankTol) {
  if (m.empty()) throw ValidationError("pivoted_row_basis of an empty matrix");
  const Matrix mt = m.transpose();  // columns of mt are rows of m
  detail::Householder qr(mt);
  const std::size_t nrows = mt.rows();
  const std::size_t ncols = mt.cols();
  const std::size_t limit = std::min(nrows, ncols);
  const double stop = rank_tol * frobenius_norm(m);

  std::size_t k = 0;
  for (; k < limit; ++k) {
    double trailing2 = 0.0;
    std::size_t best = k;
    double best_norm = -1.0;
    for (std::size_t j = k; j < ncols; ++j) {
      const double* c = qr.work.col(j) + k;
      const double nj = detail::col_dot(c, c, nrows - k);
      trailing2 += nj;
      if (nj > best_norm) {
        best_norm = nj;
        best = j;
      }
    }
    if (std::sqrt(trailing2) <= stop) break;
    qr.swap_columns(k, best);
    qr.reflect_column(k);
  }
  qr.steps = k;

  RowBasis out;
  out.indices.assign(qr.perm.begin(), qr.perm.begin() + k);
  out.coeffs = Matrix(m.rows(), k);
  for (std::size_t p = 0; p < k; ++p) out.coeffs(qr.perm[p], p) = 1.0;

  // T = R11⁻¹·R12 by back substitution, one column of R12 at a time.
  Vector t(k);
  for (std::size_t j = k; j < ncols; ++j) {
    const double* r12 = qr.work.col(j);
    for (std::size_t ii = k; ii-- > 0;) {
      double s = r12[ii];
      for (std::size_t jj = ii + 1; jj < k; ++jj) s -= qr.work.col(jj)[ii] * t[jj];
      t[ii] = s / qr.work.col(ii)[ii];
    }
    for (std::size_t p = 0; p < k; ++p) out.coeffs(qr.perm[j], p) = t[p];
  }
  return out;
}

/// Moore–Penrose pseudo-inverse; singular values below 1e-12·σ_max are zero.
inline Matrix pseudo_inverse(const Matrix& m) {
  if (m.empty()) throw ValidationError("pseudo_inverse of an empty matrix");
  const SvdResult s = svd(m);
  const double cutoff = 1e-12 * (s.singular_values.empty() ? 0.0 : s.singular_values.front());
  Matrix vs = s.right_basis;  // cols × p
  for (std::size_t c = 0; c < vs.cols(); ++c) {
    const double sv = s.singular_values[c];
    const double inv = (sv > cutoff && sv > 0.0) ? 1.0 / sv : 0.0;
    for (std::size_t r = 0; r < vs.rows(); ++r) vs(r, c) *= inv;
  }
  return vs * s.left_basis.transpose();
}

/// Largest entrywise deviation of bᵀb from the identity.
inline double orthonormality_defect(const Matrix& b) {
  const Matrix g = transpose_times(b, b);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j)
      worst = std::max(worst, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
  return worst;
}

/// basis·(basisᵀ·h): orthogonal projection of every column of h onto
/// span(basis).
inline Matrix project_columns(const Matrix& basis, const Matrix& h) {
  if (basis.rows() != h.rows()) {
    throw ValidationError("project_columns: basis has " + std::to_string(basis.rows()) +
                          " rows, h has " + std::to_string(h.rows()));
  }
  if (orthonormality_defect(basis) > 1e-8)
    throw ValidationError("project_columns: basis columns are not orthonormal");
  return basis * transpose_times(basis, h);
}

/// rows × width matrix whose leading columns are an orthonormal basis of the
/// dominant width-dimensional left singular subspace of m. Columns beyond
/// rows(m) (impossible to make orthonormal) are zero.
inline Matrix range_basis(const Matrix& m, std::size_t width) {
  Matrix out(m.rows(), width);
  const std::size_t usable = std::min(width, m.rows());
  if (usable == 0) return out;
  Matrix left;
  if (usable <= std::min(m.rows(), m.cols())) {
    left = truncated_svd(m, usable).left_basis;
  } else {
    // More directions requested than the column count provides: complete.
    const SvdResult s = svd(m);
    left = Matrix(m.rows(), usable);
    std::vector<bool> fill(usable, true);
    for (std::size_t c = 0; c < s.left_basis.cols(); ++c) {
      for (std::size_t r = 0; r < m.rows(); ++r) left(r, c) = s.left_basis(r, c);
      fill[c] = false;
    }
    detail::complete_orthonormal(left, fill);
  }
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < usable; ++c) out(r, c) = left(r, c);
  return out;
}

/// Householder QR with Q made unique by a non-negative diagonal of R.
inline Matrix orthonormal_q(const Matrix& a) {
  detail::Householder qr(a);
  const std::size_t steps = std::min(a.rows(), a.cols());
  for (std::size_t k = 0; k < steps; ++k) qr.reflect_column(k);
  qr.steps = steps;
  Matrix q = qr.thin_q();
  const Matrix r = qr.r_factor();
  for (std::size_t c = 0; c < steps; ++c) {
    if (r(c, c) < 0.0)
      for (std::size_t i = 0; i < q.rows(); ++i) q(i, c) = -q(i, c);
  }
  return q;
}

}  // namespace gtc::linalg
