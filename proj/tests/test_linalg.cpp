#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "liepush/errors.hpp"
#include "liepush/linalg.hpp"
#include "liepush/rng.hpp"

using namespace liepush;
using linalg::Matrix;
using linalg::Vector;

namespace {

Matrix raw_series(const Matrix& a, int terms) {
    Matrix sum = Matrix::Identity(a.rows(), a.cols());
    Matrix term = sum;
    for (int k = 1; k < terms; ++k) {
        term = term * a / static_cast<double>(k);
        sum += term;
    }
    return sum;
}

double cofactor_det(const Matrix& a) {
    const auto n = a.rows();
    if (n == 1) return a(0, 0);
    double acc = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        Matrix minor(n - 1, n - 1);
        for (Eigen::Index r = 1; r < n; ++r) {
            for (Eigen::Index c = 0, cc = 0; c < n; ++c) {
                if (c == j) continue;
                minor(r - 1, cc++) = a(r, c);
            }
        }
        acc += ((j % 2 == 0) ? 1.0 : -1.0) * a(0, j) * cofactor_det(minor);
    }
    return acc;
}

Matrix random_matrix(Rng& rng, int n, double scale) {
    Matrix a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = scale * rng.normal();
    return a;
}

} // namespace

TEST(MatExp, ZeroIsIdentity) {
    EXPECT_EQ(linalg::max_abs(linalg::mat_exp(Matrix::Zero(3, 3)) - Matrix::Identity(3, 3)), 0.0);
}

TEST(MatExp, Diagonal) {
    Matrix a = Matrix::Zero(2, 2);
    a(0, 0) = 1.0;
    a(1, 1) = 2.0;
    const Matrix e = linalg::mat_exp(a);
    EXPECT_NEAR(e(0, 0), std::exp(1.0), 1e-14);
    EXPECT_NEAR(e(1, 1), std::exp(2.0), 1e-13);
    EXPECT_EQ(e(0, 1), 0.0);
    EXPECT_EQ(e(1, 0), 0.0);
}

TEST(MatExp, QuarterTurnMatchesRawSeries) {
    const double h = std::numbers::pi / 2;
    Matrix a(2, 2);
    a << 0, -h, h, 0;
    const Matrix e = linalg::mat_exp(a);
    EXPECT_LT(linalg::max_abs(e - raw_series(a, 60)), 1e-14);
    Matrix expected(2, 2);
    expected << 0, -1, 1, 0;
    EXPECT_LT(linalg::max_abs(e - expected), 1e-14);
}

TEST(MatExp, InverseProduct) {
    Rng rng(11);
    for (int n : {3, 4, 6}) {
        for (int trial = 0; trial < 50; ++trial) {
            Matrix a = random_matrix(rng, n, 1.0);
            a *= (5.0 * rng.uniform()) / a.norm();
            const Matrix p = linalg::mat_exp(a) * linalg::mat_exp(-a);
            EXPECT_LT(linalg::max_abs(p - Matrix::Identity(n, n)), 1e-9);
        }
    }
}

TEST(MatExp, DeterminantIsExpTrace) {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix a = random_matrix(rng, 4, 0.3);
        const double expected = std::exp(a.trace());
        EXPECT_NEAR(linalg::det(linalg::mat_exp(a)) / expected, 1.0, 1e-8);
    }
}

TEST(MatExp, RejectsBadInput) {
    EXPECT_THROW(linalg::mat_exp(Matrix::Zero(2, 3)), InvalidArgument);
    Matrix a = Matrix::Zero(2, 2);
    a(0, 1) = std::nan("");
    EXPECT_THROW(linalg::mat_exp(a), InvalidArgument);
}

TEST(Det, SmallCases) {
    EXPECT_DOUBLE_EQ(linalg::det(Matrix::Identity(3, 3)), 1.0);
    Matrix d = Matrix::Zero(2, 2);
    d(0, 0) = 2;
    d(1, 1) = 3;
    EXPECT_DOUBLE_EQ(linalg::det(d), 6.0);
    EXPECT_THROW(linalg::det(Matrix::Zero(2, 3)), InvalidArgument);
}

TEST(Det, MatchesCofactorExpansion) {
    Rng rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        const Matrix a = random_matrix(rng, 4, 1.0);
        EXPECT_NEAR(linalg::det(a), cofactor_det(a), 1e-12 * std::max(1.0, std::abs(cofactor_det(a))));
    }
}

TEST(Solve, SmallCases) {
    Vector b(3);
    b << 1, -2, 3;
    EXPECT_EQ(linalg::solve(Matrix::Identity(3, 3), b), b);
    Matrix d = Matrix::Zero(2, 2);
    d(0, 0) = 2;
    d(1, 1) = 4;
    Vector c(2);
    c << 2, 8;
    const Vector x = linalg::solve(d, c);
    EXPECT_DOUBLE_EQ(x[0], 1.0);
    EXPECT_DOUBLE_EQ(x[1], 2.0);
}

TEST(Solve, ResidualOnRandomSystems) {
    Rng rng(14);
    for (int trial = 0; trial < 100; ++trial) {
        const Matrix a = random_matrix(rng, 3, 1.0) + 3.0 * Matrix::Identity(3, 3);
        Vector b(3);
        b << rng.normal(), rng.normal(), rng.normal();
        const Vector x = linalg::solve(a, b);
        EXPECT_LE((a * x - b).cwiseAbs().maxCoeff(), 1e-10 * b.cwiseAbs().maxCoeff());
    }
}

TEST(Solve, SingularMatrixThrows) {
    Matrix a(2, 2);
    a << 1, 2, 2, 4;
    EXPECT_THROW(linalg::solve(a, Vector::Ones(2)), SingularMatrix);
}
