#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "fedaudit/linalg.hpp"
#include "fedaudit/matrix.hpp"
#include "fedaudit/rng.hpp"

using fedaudit::Matrix;
using fedaudit::Subspace;
using fedaudit::Vector;

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

// Independent rank oracle: count singular values above a relative threshold.
std::size_t svd_rank(const Matrix& m, double rel_tol = 1e-8) {
  if (m.rows() == 0 || m.cols() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(m));
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * s(0)) ++r;
  return r;
}

// Independent projection oracle: least-squares solution of span * x ~ v via
// Eigen's QR, reconstruction span * x.
Vector lstsq_projection(const Matrix& span, const Vector& v) {
  Eigen::MatrixXd g = to_eigen(span);
  Eigen::VectorXd b(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) b(i) = v[i];
  Eigen::VectorXd x = g.colPivHouseholderQr().solve(b);
  Eigen::VectorXd p = g * x;
  Vector out(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) out[i] = p(i);
  return out;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return fedaudit::gaussian_matrix(rows, cols, rng);
}

Matrix planted_rank_matrix(std::size_t rows, std::size_t cols, std::size_t rank,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Matrix b = fedaudit::gaussian_matrix(rows, rank, rng);
  Matrix c = fedaudit::gaussian_matrix(rank, cols, rng);
  return matmul(b, c);
}

double max_abs_diff(const Vector& a, const Vector& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("qr of identity") {
  auto f = fedaudit::qr_decompose(Matrix::identity(3));
  CHECK(f.rank == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(f.r(i, i)) == Catch::Approx(1.0));
}

TEST_CASE("qr q columns are orthonormal") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    Matrix a = random_matrix(17, 9, seed);
    auto f = fedaudit::qr_decompose(a);
    Matrix qtq = fedaudit::transposed_matmul(f.q, f.q);
    for (std::size_t i = 0; i < qtq.rows(); ++i)
      for (std::size_t j = 0; j < qtq.cols(); ++j)
        CHECK(std::abs(qtq(i, j) - (i == j ? 1.0 : 0.0)) < 1e-10);
  }
}

TEST_CASE("qr reconstructs the permuted input") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    Matrix a = random_matrix(12, 7, seed);
    auto f = fedaudit::qr_decompose(a);
    Matrix qr = matmul(f.q, f.r);
    double scale = a.frobenius_norm();
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j)
        CHECK(std::abs(qr(i, j) - a(i, f.column_permutation[j])) < 1e-9 * scale);
  }
}

TEST_CASE("qr rank matches svd oracle on planted ranks") {
  std::mt19937_64 pick(20260814);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(2, 64);
    std::size_t rows = dim(pick), cols = dim(pick);
    std::uniform_int_distribution<std::size_t> rk(1, std::min(rows, cols));
    std::size_t rank = rk(pick);
    Matrix a = planted_rank_matrix(rows, cols, rank, 1000 + trial);
    CAPTURE(rows, cols, rank, trial);
    CHECK(fedaudit::numerical_rank(a) == svd_rank(a));
    CHECK(fedaudit::numerical_rank(a) == rank);
  }
}

TEST_CASE("zero matrix has rank zero and an empty basis") {
  Matrix z(6, 4);
  CHECK(fedaudit::numerical_rank(z) == 0);
  Subspace s = fedaudit::make_subspace(z);
  CHECK(s.rank == 0);
  CHECK(s.ambient_dim == 6);
  CHECK(s.basis.cols() == 0);
  Vector v{1, 2, 3, 4, 5, 6};
  Vector p = fedaudit::project_onto(s, v);
  for (double x : p) CHECK(x == 0.0);
}

TEST_CASE("rank-one span reduces to a single basis column") {
  Matrix a = Matrix::from_rows({{1, 2}, {1, 2}, {1, 2}, {1, 2}});
  Subspace s = fedaudit::make_subspace(a);
  REQUIRE(s.rank == 1);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(std::abs(std::abs(s.basis(i, 0)) - 0.5) < 1e-12);
}

TEST_CASE("projection matches least-squares oracle") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 24, cols = 6;
    Matrix span = fedaudit::gaussian_matrix(n, cols, rng);
    Vector v = fedaudit::gaussian_vector(n, rng);
    Subspace s = fedaudit::make_subspace(span);
    REQUIRE(s.rank == cols);
    Vector got = fedaudit::project_onto(s, v);
    Vector want = lstsq_projection(span, v);
    CHECK(max_abs_diff(got, want) < 1e-8);
  }
}

TEST_CASE("projection is idempotent and residual is orthogonal") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix span = planted_rank_matrix(32, 10, 5, 400 + trial);
    Subspace s = fedaudit::make_subspace(span);
    CHECK(s.rank == 5);
    Vector v = fedaudit::gaussian_vector(32, rng);
    Vector p1 = fedaudit::project_onto(s, v);
    Vector p2 = fedaudit::project_onto(s, p1);
    CHECK(max_abs_diff(p1, p2) < 1e-10);

    Vector resid(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) resid[i] = v[i] - p1[i];
    Vector back = fedaudit::transposed_matvec(s.basis, resid);
    for (double c : back) CHECK(std::abs(c) < 1e-10);

    double v2 = fedaudit::l2_norm(v), p2n = fedaudit::l2_norm(p1),
           r2 = fedaudit::l2_norm(resid);
    CHECK(std::abs(v2 * v2 - (p2n * p2n + r2 * r2)) < 1e-8 * v2 * v2);
  }
}

TEST_CASE("vector inside the span projects to itself") {
  std::mt19937_64 rng(33);
  Matrix span = fedaudit::gaussian_matrix(16, 4, rng);
  Subspace s = fedaudit::make_subspace(span);
  Vector coeff = fedaudit::gaussian_vector(4, rng);
  Vector inside = matvec(span, coeff);
  Vector p = fedaudit::project_onto(s, inside);
  CHECK(max_abs_diff(p, inside) < 1e-9);
  Vector diff(inside.size());
  for (std::size_t i = 0; i < inside.size(); ++i) diff[i] = inside[i] - p[i];
  CHECK(fedaudit::l1_norm(diff) < 1e-9);
}

TEST_CASE("projection rejects a dimension mismatch") {
  Subspace s = fedaudit::make_subspace(Matrix::identity(4));
  Vector v{1, 2, 3};
  CHECK_THROWS_AS(fedaudit::project_onto(s, v), fedaudit::ValidationError);
}

TEST_CASE("back substitution solves hand-checked systems") {
  Matrix r = Matrix::from_rows({{2, 1}, {0, 4}});
  Vector y{4, 8};
  Vector alpha = fedaudit::back_substitute(r, y);
  CHECK(alpha[0] == Catch::Approx(1.0));
  CHECK(alpha[1] == Catch::Approx(2.0));
  Vector rx = matvec(r, alpha);
  CHECK(max_abs_diff(rx, y) < 1e-12);

  Vector id_sol = fedaudit::back_substitute(Matrix::identity(2), Vector{5, -3});
  CHECK(id_sol[0] == Catch::Approx(5.0));
  CHECK(id_sol[1] == Catch::Approx(-3.0));
}

TEST_CASE("back substitution agrees with eigen on random triangles") {
  std::mt19937_64 rng(55);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t n = 8;
    Matrix r(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j)
        r(i, j) = fedaudit::gaussian_vector(1, rng)[0] + (i == j ? 3.0 : 0.0);
    Vector y = fedaudit::gaussian_vector(n, rng);
    Vector alpha = fedaudit::back_substitute(r, y);
    Eigen::MatrixXd re = to_eigen(r);
    Eigen::VectorXd ye(n);
    for (std::size_t i = 0; i < n; ++i) ye(i) = y[i];
    Eigen::VectorXd xe = re.triangularView<Eigen::Upper>().solve(ye);
    for (std::size_t i = 0; i < n; ++i) CHECK(alpha[i] == Catch::Approx(xe(i)).margin(1e-10));
  }
}

TEST_CASE("back substitution reports singular diagonals") {
  Matrix r = Matrix::from_rows({{1, 2}, {0, 0}});
  Vector y{1, 1};
  CHECK_THROWS_AS(fedaudit::back_substitute(r, y), fedaudit::SingularSystemError);
}

TEST_CASE("back substitution validates shapes") {
  Matrix r(2, 3);
  CHECK_THROWS_AS(fedaudit::back_substitute(r, Vector{1, 2}), fedaudit::ValidationError);
  CHECK_THROWS_AS(fedaudit::back_substitute(Matrix::identity(2), Vector{1, 2, 3}),
                  fedaudit::ValidationError);
}

TEST_CASE("l1 norm hand values") {
  CHECK(fedaudit::l1_norm(Vector{0, 0, 0}) == 0.0);
  CHECK(fedaudit::l1_norm(Vector{1, -2, 3}) == Catch::Approx(6.0));
  Vector v(768, 0.13);
  CHECK(fedaudit::l1_norm(v) == Catch::Approx(99.84).epsilon(1e-9));
}

TEST_CASE("l1 norm rejects non-finite input") {
  Vector v{1.0, std::numeric_limits<double>::quiet_NaN()};
  CHECK_THROWS_AS(fedaudit::l1_norm(v), fedaudit::ValidationError);
}

TEST_CASE("cosine similarity endpoints") {
  Vector u{1, 0, 2};
  Vector w{2, 0, 4};
  CHECK(fedaudit::cosine_similarity(u, w) == Catch::Approx(1.0));
  Vector neg{-1, 0, -2};
  CHECK(fedaudit::cosine_similarity(u, neg) == Catch::Approx(-1.0));
  Vector orth{0, 5, 0};
  CHECK(fedaudit::cosine_similarity(u, orth) == Catch::Approx(0.0).margin(1e-15));
  Vector zero{0, 0, 0};
  CHECK_THROWS_AS(fedaudit::cosine_similarity(u, zero),
                  fedaudit::UndefinedSimilarityError);
  CHECK_THROWS_AS(fedaudit::cosine_similarity(zero, w),
                  fedaudit::UndefinedSimilarityError);
}

TEST_CASE("cosine similarity stays clamped") {
  Vector u{1e-8, 1e-8};
  Vector w{1e-8, 1e-8};
  double c = fedaudit::cosine_similarity(u, w);
  CHECK(c <= 1.0);
  CHECK(c >= -1.0);
}

TEST_CASE("rank of a tall and of a wide matrix caps at the short side") {
  Matrix tall = random_matrix(20, 3, 91);
  CHECK(fedaudit::numerical_rank(tall) == 3);
  Matrix wide = random_matrix(3, 20, 92);
  CHECK(fedaudit::numerical_rank(wide) == 3);
}

TEST_CASE("exactly dependent columns collapse the rank") {
  Matrix a(4, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    a(i, 0) = static_cast<double>(i + 1);
    a(i, 1) = 3.0 * a(i, 0);
  }
  CHECK(fedaudit::numerical_rank(a) == 1);
}

TEST_CASE("axis-aligned projection keeps only spanned coordinates") {
  Matrix e1(3, 1);
  e1(0, 0) = 1.0;
  Subspace s = fedaudit::make_subspace(e1);
  Vector p = fedaudit::project_onto(s, Vector{1, 2, 3});
  CHECK(p[0] == Catch::Approx(1.0));
  CHECK(std::abs(p[1]) < 1e-15);
  CHECK(std::abs(p[2]) < 1e-15);
}

TEST_CASE("tall qr reconstruction against the svd oracle") {
  Matrix a = random_matrix(100, 20, 4242);
  auto f = fedaudit::qr_decompose(a);
  CHECK(f.rank == svd_rank(a));
  Matrix qr = matmul(f.q, f.r);
  double err = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      double d = qr(i, j) - a(i, f.column_permutation[j]);
      err += d * d;
    }
  CHECK(std::sqrt(err) < 1e-9 * a.frobenius_norm());
}

// Product of a p x n batch transposed with a p x m sensitivity matrix: the
// weight-gradient shape whose rank caps at min(n, p, m).
TEST_CASE("gradient-shaped products realize the min-rank law") {
  std::mt19937_64 pick(99);
  std::uniform_int_distribution<std::size_t> dim(2, 64);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t p = dim(pick), n = dim(pick), m = dim(pick);
    std::mt19937_64 rng(5000 + trial);
    Matrix x = fedaudit::gaussian_matrix(p, n, rng);
    Matrix alpha = fedaudit::gaussian_matrix(p, m, rng);
    Matrix grad = fedaudit::transposed_matmul(x, alpha);
    REQUIRE(grad.rows() == n);
    REQUIRE(grad.cols() == m);
    std::size_t expect = std::min({n, p, m});
    CAPTURE(p, n, m, trial);
    CHECK(fedaudit::numerical_rank(grad) == expect);
    CHECK(svd_rank(grad) == expect);
  }
}

TEST_CASE("gradient-shaped product at the paper dimensions") {
  std::mt19937_64 rng(271828);
  Matrix x = fedaudit::gaussian_matrix(8, 64, rng);
  Matrix alpha = fedaudit::gaussian_matrix(8, 32, rng);
  CHECK(fedaudit::numerical_rank(fedaudit::transposed_matmul(x, alpha)) == 8);
}

TEST_CASE("matmul and matvec agree with eigen") {
  std::mt19937_64 rng(77);
  Matrix a = fedaudit::gaussian_matrix(9, 5, rng);
  Matrix b = fedaudit::gaussian_matrix(5, 7, rng);
  Matrix c = matmul(a, b);
  Eigen::MatrixXd ce = to_eigen(a) * to_eigen(b);
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j)
      CHECK(c(i, j) == Catch::Approx(ce(i, j)).margin(1e-12));

  Vector x = fedaudit::gaussian_vector(5, rng);
  Vector y = matvec(a, x);
  Eigen::VectorXd xe(5);
  for (std::size_t i = 0; i < 5; ++i) xe(i) = x[i];
  Eigen::VectorXd ye = to_eigen(a) * xe;
  for (std::size_t i = 0; i < y.size(); ++i)
    CHECK(y[i] == Catch::Approx(ye(i)).margin(1e-12));

  Vector yt = fedaudit::transposed_matvec(a, y);
  Eigen::VectorXd yte = to_eigen(a).transpose() * ye;
  for (std::size_t i = 0; i < yt.size(); ++i)
    CHECK(yt[i] == Catch::Approx(yte(i)).margin(1e-12));

  Matrix atb = fedaudit::transposed_matmul(a, a);
  Eigen::MatrixXd atbe = to_eigen(a).transpose() * to_eigen(a);
  for (std::size_t i = 0; i < atb.rows(); ++i)
    for (std::size_t j = 0; j < atb.cols(); ++j)
      CHECK(atb(i, j) == Catch::Approx(atbe(i, j)).margin(1e-12));
}

TEST_CASE("matrix constructors validate input") {
  CHECK_THROWS_AS(Matrix(2, 2, Vector{1, 2, 3}), fedaudit::ValidationError);
  CHECK_THROWS_AS(Matrix(1, 2, Vector{1.0, std::numeric_limits<double>::infinity()}),
                  fedaudit::ValidationError);
  CHECK_THROWS_AS(Matrix::from_rows({{1, 2}, {3}}), fedaudit::ValidationError);
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), fedaudit::ValidationError);
}
