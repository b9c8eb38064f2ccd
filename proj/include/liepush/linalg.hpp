#pragma once

#include <Eigen/Dense>

namespace liepush::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Largest absolute entry.
double max_abs(const Matrix& a);

/// Matrix exponential by scaling and squaring around a truncated Taylor
/// series. The series is summed to order 12 and extended while the next term
/// exceeds `tol` in max-norm. Throws InvalidArgument for non-square or
/// non-finite input.
Matrix mat_exp(const Matrix& a, double tol = 1e-15);

/// Determinant via LU with partial pivoting.
double det(const Matrix& a);

/// Solves a x = b. Throws SingularMatrix when |det a| <= 1e-12.
Vector solve(const Matrix& a, const Vector& b);

} // namespace liepush::linalg
