#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "fedaudit/errors.hpp"
#include "fedaudit/matrix.hpp"

// Dense kernel behind the subspace attack: column-pivoted Householder QR,
// triangular solves, orthogonal projection onto a gradient-spanned subspace,
// numerical rank and the vector norms used as decision metrics.

namespace fedaudit {

inline constexpr double kDefaultRankTol = 1e-8;

struct QrFactors {
  Matrix q;                                   // column-orthonormal, rows x k
  Matrix r;                                   // upper triangular, k x cols
  std::size_t rank = 0;                       // |r(i,i)| > rank_tol * |r(0,0)|
  std::vector<std::size_t> column_permutation;  // position j holds original column index
};

// Orthonormal basis for Span(given columns); proper subspace when rank < ambient_dim.
struct Subspace {
  Matrix basis;  // ambient_dim x rank
  std::size_t ambient_dim = 0;
  std::size_t rank = 0;
};

// Householder QR with column pivoting on the largest remaining column norm.
// Pivoting makes the diagonal of R non-increasing in magnitude, so the rank
// cut at rank_tol * |r(0,0)| is meaningful for rank-deficient input.
inline QrFactors qr_decompose(const Matrix& m, double rank_tol = kDefaultRankTol) {
  m.ensure_finite();
  if (rank_tol <= 0.0) throw ValidationError("rank_tol must be positive");
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  const std::size_t k = std::min(rows, cols);

  Matrix a = m;
  std::vector<std::size_t> perm(cols);
  for (std::size_t j = 0; j < cols; ++j) perm[j] = j;

  std::vector<double> norm_sq(cols, 0.0), norm_sq_orig(cols, 0.0);
  for (std::size_t j = 0; j < cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += a(i, j) * a(i, j);
    norm_sq[j] = norm_sq_orig[j] = s;
  }

  // Unnormalized reflector vectors v_s over rows s..rows, H = I - 2 v v^T / (v^T v).
  std::vector<Vector> reflectors(k);

  for (std::size_t s = 0; s < k; ++s) {
    std::size_t pivot = s;
    for (std::size_t j = s + 1; j < cols; ++j)
      if (norm_sq[j] > norm_sq[pivot]) pivot = j;
    if (pivot != s) {
      for (std::size_t i = 0; i < rows; ++i) std::swap(a(i, s), a(i, pivot));
      std::swap(perm[s], perm[pivot]);
      std::swap(norm_sq[s], norm_sq[pivot]);
      std::swap(norm_sq_orig[s], norm_sq_orig[pivot]);
    }

    double col_norm_sq = 0.0;
    for (std::size_t i = s; i < rows; ++i) col_norm_sq += a(i, s) * a(i, s);
    const double col_norm = std::sqrt(col_norm_sq);
    if (col_norm == 0.0) continue;  // remaining block is numerically empty

    const double alpha = a(s, s) >= 0.0 ? -col_norm : col_norm;
    Vector v(rows - s);
    v[0] = a(s, s) - alpha;
    for (std::size_t i = s + 1; i < rows; ++i) v[i - s] = a(i, s);
    double vtv = 0.0;
    for (double x : v) vtv += x * x;

    a(s, s) = alpha;
    for (std::size_t i = s + 1; i < rows; ++i) a(i, s) = 0.0;

    if (vtv > 0.0) {
      for (std::size_t j = s + 1; j < cols; ++j) {
        double dot = 0.0;
        for (std::size_t i = s; i < rows; ++i) dot += v[i - s] * a(i, j);
        const double c = 2.0 * dot / vtv;
        for (std::size_t i = s; i < rows; ++i) a(i, j) -= c * v[i - s];
      }
      reflectors[s] = std::move(v);
    }

    // Downdate remaining column norms; recompute when cancellation bites.
    for (std::size_t j = s + 1; j < cols; ++j) {
      norm_sq[j] -= a(s, j) * a(s, j);
      if (norm_sq[j] < 1e-10 * norm_sq_orig[j]) {
        double fresh = 0.0;
        for (std::size_t i = s + 1; i < rows; ++i) fresh += a(i, j) * a(i, j);
        norm_sq[j] = fresh;
      }
    }
  }

  QrFactors f;
  f.column_permutation = std::move(perm);
  f.r = Matrix(k, cols);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i; j < cols; ++j) f.r(i, j) = a(i, j);

  f.q = Matrix(rows, k);
  for (std::size_t j = 0; j < k && j < rows; ++j) f.q(j, j) = 1.0;
  for (std::size_t s = k; s-- > 0;) {
    const Vector& v = reflectors[s];
    if (v.empty()) continue;
    double vtv = 0.0;
    for (double x : v) vtv += x * x;
    for (std::size_t j = 0; j < k; ++j) {
      double dot = 0.0;
      for (std::size_t i = s; i < rows; ++i) dot += v[i - s] * f.q(i, j);
      const double c = 2.0 * dot / vtv;
      for (std::size_t i = s; i < rows; ++i) f.q(i, j) -= c * v[i - s];
    }
  }

  const double lead = k > 0 ? std::abs(f.r(0, 0)) : 0.0;
  if (lead > 0.0) {
    std::size_t rank = 0;
    while (rank < k && std::abs(f.r(rank, rank)) > rank_tol * lead) ++rank;
    f.rank = rank;
  }
  return f;
}

// Solve r * alpha = y for a square upper-triangular r by back substitution.
inline Vector back_substitute(const Matrix& r, const Vector& y) {
  if (r.rows() != r.cols())
    throw ValidationError("back_substitute expects a square triangular matrix");
  if (y.size() != r.rows())
    throw ValidationError("back_substitute rhs length mismatch");
  const std::size_t n = r.rows();
  Vector alpha(n, 0.0);
  for (std::size_t ii = n; ii-- > 0;) {
    const double d = r(ii, ii);
    if (std::abs(d) < 1e-300)
      throw SingularSystemError("zero diagonal in triangular solve at row " +
                                std::to_string(ii));
    double s = y[ii];
    for (std::size_t j = ii + 1; j < n; ++j) s -= r(ii, j) * alpha[j];
    alpha[ii] = s / d;
  }
  return alpha;
}

// Orthonormal basis for the span of the given columns, truncated to the
// numerical rank. A zero matrix yields an empty (rank 0) subspace.
inline Subspace make_subspace(const Matrix& span_columns,
                              double rank_tol = kDefaultRankTol) {
  QrFactors f = qr_decompose(span_columns, rank_tol);
  Subspace s;
  s.ambient_dim = span_columns.rows();
  s.rank = f.rank;
  s.basis = Matrix(span_columns.rows(), f.rank);
  for (std::size_t i = 0; i < span_columns.rows(); ++i)
    for (std::size_t j = 0; j < f.rank; ++j) s.basis(i, j) = f.q(i, j);
  return s;
}

// Orthogonal projection basis * (basis^T v). The residual v - result is
// orthogonal to every basis column.
inline Vector project_onto(const Subspace& s, std::span<const double> v) {
  if (v.size() != s.ambient_dim)
    throw ValidationError("projection dimension mismatch: vector " +
                          std::to_string(v.size()) + " vs ambient " +
                          std::to_string(s.ambient_dim));
  if (s.rank == 0) return Vector(s.ambient_dim, 0.0);
  Vector coeffs = transposed_matvec(s.basis, v);
  return matvec(s.basis, coeffs);
}

inline double l1_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) {
    if (!std::isfinite(x)) throw ValidationError("l1_norm of non-finite vector");
    s += std::abs(x);
  }
  return s;
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double dot(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ValidationError("dot length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ValidationError("cosine length mismatch");
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  if (nu == 0.0 || nv == 0.0)
    throw UndefinedSimilarityError("cosine similarity with a zero vector");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

inline std::size_t numerical_rank(const Matrix& m, double rank_tol = kDefaultRankTol) {
  return qr_decompose(m, rank_tol).rank;
}

}  // namespace fedaudit
