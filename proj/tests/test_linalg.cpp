#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "ztrans/errors.hpp"
#include "ztrans/linalg.hpp"
#include "ztrans/rng.hpp"

using namespace ztrans;
using linalg::Matrix;

namespace {

Matrix seeded(size_t rows, size_t cols, uint64_t seed) {
    Rng rng(seed);
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = rng.normal();
    return m;
}

Matrix seeded_symmetric(size_t n, uint64_t seed) {
    Matrix m = seeded(n, n, seed);
    Matrix s(n, n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) s(i, j) = 0.5 * (m(i, j) + m(j, i));
    return s;
}

Eigen::MatrixXd to_eigen(const Matrix& m) {
    Eigen::MatrixXd e(m.rows(), m.cols());
    for (size_t i = 0; i < m.rows(); ++i)
        for (size_t j = 0; j < m.cols(); ++j) e(static_cast<long>(i), static_cast<long>(j)) = m(i, j);
    return e;
}

double reconstruction_residual(const Matrix& a, const linalg::SvdResult& s) {
    Matrix usv = linalg::matmul(linalg::matmul(s.u, Matrix::diag(s.s)), s.v.transposed());
    return (a - usv).frobenius_norm() / std::max(a.frobenius_norm(), 1e-300);
}

}  // namespace

TEST_CASE("sym_eig: diagonal case") {
    Matrix a = Matrix::diag({4.0, 1.0});
    auto r = linalg::sym_eig(a);
    CHECK(r.values[0] == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(r.values[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sym_eig: [[2,1],[1,2]] -> eigenvalues 3,1") {
    // characteristic polynomial (2-l)^2 - 1 = 0 -> l = 3, 1
    Matrix a(2, 2, {2, 1, 1, 2});
    auto r = linalg::sym_eig(a);
    CHECK(r.values[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(r.values[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sym_eig: seeded 6x6 reconstruction and orthonormality") {
    Matrix a = seeded_symmetric(6, 42);
    auto r = linalg::sym_eig(a);
    // nonincreasing
    for (size_t i = 1; i < r.values.size(); ++i) CHECK(r.values[i - 1] >= r.values[i] - 1e-12);
    // A V = V diag(lambda)
    Matrix av = linalg::matmul(a, r.vectors);
    Matrix vl = linalg::matmul(r.vectors, Matrix::diag(r.values));
    CHECK((av - vl).frobenius_norm() <= 1e-8 * std::max(1.0, a.frobenius_norm()));
    // V^T V = I
    Matrix vtv = linalg::matmul(r.vectors.transposed(), r.vectors);
    CHECK((vtv - Matrix::identity(6)).frobenius_norm() <= 1e-8);
    // independent oracle: eigenvalues match Eigen's solver
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(a));
    for (size_t i = 0; i < 6; ++i)
        CHECK(r.values[i] == doctest::Approx(es.eigenvalues()(5 - static_cast<long>(i))).epsilon(1e-10));
}

TEST_CASE("sym_eig: asymmetric input rejected") {
    Matrix a(2, 2, {1, 2, 0, 1});
    CHECK_THROWS_AS(linalg::sym_eig(a), InvalidInput);
}

TEST_CASE("svd: identity and diagonal cases") {
    auto r = linalg::svd(Matrix::identity(3));
    for (double s : r.s) CHECK(s == doctest::Approx(1.0).epsilon(1e-12));

    Matrix d(2, 2, {3, 0, 0, 2});
    auto rd = linalg::svd(d);
    CHECK(rd.s[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(rd.s[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("svd: seeded 5x3 reconstruction, orthonormality, Eigen oracle") {
    Matrix a = seeded(5, 3, 7);
    auto r = linalg::svd(a);
    CHECK(reconstruction_residual(a, r) <= 1e-8);
    Matrix utu = linalg::matmul(r.u.transposed(), r.u);
    Matrix vtv = linalg::matmul(r.v.transposed(), r.v);
    CHECK((utu - Matrix::identity(utu.rows())).frobenius_norm() <= 1e-8);
    CHECK((vtv - Matrix::identity(vtv.rows())).frobenius_norm() <= 1e-8);

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(a));
    for (size_t i = 0; i < r.s.size(); ++i)
        CHECK(r.s[i] == doctest::Approx(svd.singularValues()(static_cast<long>(i))).epsilon(1e-10));
}

TEST_CASE("svd: wide matrix handled via smaller-side Gram") {
    Matrix a = seeded(3, 8, 11);
    auto r = linalg::svd(a);
    CHECK(reconstruction_residual(a, r) <= 1e-8);
}

TEST_CASE("truncate_by_variance: energy-fraction arithmetic") {
    linalg::SvdResult s;
    s.s = {3.0, 1.0};
    s.u = Matrix::identity(2);
    s.v = Matrix::identity(2);
    // energy fractions: 9/10 then 1.0
    CHECK(linalg::truncate_by_variance(s, 0.90).cols() == 1);
    CHECK(linalg::truncate_by_variance(s, 0.99).cols() == 2);

    linalg::SvdResult eq;
    eq.s = {1.0, 1.0, 1.0};
    eq.u = Matrix::identity(3);
    eq.v = Matrix::identity(3);
    CHECK(linalg::truncate_by_variance(eq, 1.0).cols() == 3);
}

TEST_CASE("cca_fit: self and orthogonal-map correlations are 1") {
    Matrix x = seeded(50, 4, 3);
    auto self = linalg::cca_fit(x, x, 1e-6);
    for (double c : self.correlations) CHECK(c == doctest::Approx(1.0).epsilon(1e-6));

    // orthogonal map: rotation built by QR of a seeded matrix
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(to_eigen(seeded(4, 4, 5)));
    Eigen::MatrixXd q = qr.householderQ();
    Matrix y(50, 4);
    Eigen::MatrixXd ye = to_eigen(x) * q;
    for (size_t i = 0; i < 50; ++i)
        for (size_t j = 0; j < 4; ++j) y(i, j) = ye(static_cast<long>(i), static_cast<long>(j));
    auto rot = linalg::cca_fit(x, y, 1e-6);
    for (double c : rot.correlations) CHECK(c == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("cca_fit: agreement with a direct eigensolve oracle") {
    // Independent oracle: canonical correlations are the singular values of
    // Sxx^{-1/2} Sxy Syy^{-1/2}, all computed with Eigen.
    Matrix x = seeded(50, 4, 21);
    Matrix y = seeded(50, 4, 22);
    // give y some shared signal so correlations are nontrivial
    for (size_t i = 0; i < 50; ++i)
        for (size_t j = 0; j < 4; ++j) y(i, j) += 0.8 * x(i, j);

    double reg = 1e-6;
    auto got = linalg::cca_fit(x, y, reg);

    Eigen::MatrixXd ex = to_eigen(x), ey = to_eigen(y);
    ex.rowwise() -= ex.colwise().mean();
    ey.rowwise() -= ey.colwise().mean();
    Eigen::MatrixXd sxx = ex.transpose() * ex / 49.0 + reg * Eigen::MatrixXd::Identity(4, 4);
    Eigen::MatrixXd syy = ey.transpose() * ey / 49.0 + reg * Eigen::MatrixXd::Identity(4, 4);
    Eigen::MatrixXd sxy = ex.transpose() * ey / 49.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esx(sxx), esy(syy);
    Eigen::MatrixXd m = esx.operatorInverseSqrt() * sxy * esy.operatorInverseSqrt();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    for (size_t i = 0; i < got.correlations.size(); ++i)
        CHECK(got.correlations[i] ==
              doctest::Approx(svd.singularValues()(static_cast<long>(i))).epsilon(1e-6));
}

TEST_CASE("cca_fit: rank deficiency without regularization") {
    Matrix x(6, 3);
    for (size_t i = 0; i < 6; ++i) {
        x(i, 0) = static_cast<double>(i);
        x(i, 1) = 2.0 * static_cast<double>(i);  // exactly collinear
        x(i, 2) = static_cast<double>(i * i);
    }
    CHECK_THROWS_AS(linalg::cca_fit(x, x, 0.0), SingularityError);
}

TEST_CASE("cosine: hand cases") {
    CHECK(linalg::cosine({1, 0}, {0, 1}) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(linalg::cosine({1, 1}, {2, 2}) == doctest::Approx(1.0).epsilon(1e-12));
    // 11 / (sqrt(5) * 5)
    CHECK(linalg::cosine({1, 2}, {3, 4}) == doctest::Approx(0.98387).epsilon(1e-4));
    CHECK(linalg::cosine({1, 2}, {3, 4}) ==
          doctest::Approx(11.0 / (std::sqrt(5.0) * 5.0)).epsilon(1e-12));
    // scale invariance
    CHECK(linalg::cosine({0.3, -0.7, 2.0}, {1.1, 0.2, -0.4}) ==
          doctest::Approx(linalg::cosine({0.6, -1.4, 4.0}, {5.5, 1.0, -2.0})).epsilon(1e-12));
    CHECK_THROWS_AS(linalg::cosine({0, 0}, {1, 1}), DegenerateInput);
}

TEST_CASE("pearson: hand cases") {
    CHECK(linalg::pearson({1, 2, 3}, {2, 4, 6}).r == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(linalg::pearson({1, 2, 3}, {3, 2, 1}).r == doctest::Approx(-1.0).epsilon(1e-12));
    // direct formula: r = 0.8 for this 4-point case
    CHECK(linalg::pearson({1, 2, 3, 4}, {1, 3, 2, 4}).r == doctest::Approx(0.8).epsilon(1e-12));
    // symmetry and affine invariance
    auto a = linalg::pearson({1, 2, 3, 4}, {1, 3, 2, 4});
    auto b = linalg::pearson({1, 3, 2, 4}, {1, 2, 3, 4});
    CHECK(a.r == doctest::Approx(b.r).epsilon(1e-12));
    auto c = linalg::pearson({10, 20, 30, 40}, {1, 3, 2, 4});
    CHECK(c.r == doctest::Approx(0.8).epsilon(1e-12));
    CHECK_THROWS_AS(linalg::pearson({1, 1, 1}, {1, 2, 3}), DegenerateInput);
}

TEST_CASE("pearson: p-value against known value") {
    // r=0.8, n=4 -> t = 0.8*sqrt(2)/sqrt(0.36) = 1.8856..., two-sided p ~ 0.2
    auto r = linalg::pearson({1, 2, 3, 4}, {1, 3, 2, 4});
    CHECK(r.p_value == doctest::Approx(0.2).epsilon(1e-6));
}

TEST_CASE("spectral_embedding: two-block similarity separates by sign") {
    Matrix s(4, 4, {1.0, 0.9, 0.0, 0.0,  //
                    0.9, 1.0, 0.0, 0.0,  //
                    0.0, 0.0, 1.0, 0.9,  //
                    0.0, 0.0, 0.9, 1.0});
    auto emb = linalg::spectral_embedding(s, 1);
    CHECK(emb.disconnected);  // two components
    CHECK(emb.coordinates.rows() == 4);
    double a = emb.coordinates(0, 0), b = emb.coordinates(2, 0);
    CHECK(emb.coordinates(1, 0) * a > 0.0);
    CHECK(emb.coordinates(3, 0) * b > 0.0);
    CHECK(a * b <= 0.0);
}

TEST_CASE("spectral_embedding: constant similarity flagged degenerate") {
    Matrix s(4, 4, 1.0);
    auto emb = linalg::spectral_embedding(s, 1);
    CHECK(emb.degenerate);
}

TEST_CASE("spectral_embedding: relabeling invariance") {
    Matrix s(3, 3, {1.0, 0.8, 0.1,  //
                    0.8, 1.0, 0.2,  //
                    0.1, 0.2, 1.0});
    auto base = linalg::spectral_embedding(s, 1);
    // permutation (0 1 2) -> (2 0 1)
    size_t p[3] = {2, 0, 1};
    Matrix sp(3, 3);
    for (size_t i = 0; i < 3; ++i)
        for (size_t j = 0; j < 3; ++j) sp(p[i], p[j]) = s(i, j);
    auto perm = linalg::spectral_embedding(sp, 1);
    for (size_t i = 0; i < 3; ++i)
        CHECK(std::abs(perm.coordinates(p[i], 0)) ==
              doctest::Approx(std::abs(base.coordinates(i, 0))).epsilon(1e-8));
}
