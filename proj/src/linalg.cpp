#include "liepush/linalg.hpp"

#include <cmath>

#include "liepush/errors.hpp"

namespace liepush::linalg {

namespace {

void require_square(const Matrix& a, const char* what) {
    if (a.rows() != a.cols() || a.rows() == 0) {
        throw InvalidArgument(std::string(what) + ": matrix must be square and non-empty");
    }
}

} // namespace

double max_abs(const Matrix& a) {
    return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff();
}

Matrix mat_exp(const Matrix& a, double tol) {
    require_square(a, "mat_exp");
    if (!a.allFinite()) throw InvalidArgument("mat_exp: non-finite entries");
    if (!(tol > 0.0)) throw InvalidArgument("mat_exp: tol must be positive");

    constexpr int kOrder = 12;
    constexpr int kMaxOrder = 40;

    // Scale so the infinity norm drops below 0.5.
    const double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
    int squarings = 0;
    if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
    const Matrix scaled = a / std::ldexp(1.0, squarings);

    const auto n = a.rows();
    Matrix sum = Matrix::Identity(n, n);
    Matrix term = Matrix::Identity(n, n);
    for (int k = 1; k <= kMaxOrder; ++k) {
        term = term * scaled / static_cast<double>(k);
        sum += term;
        if (k >= kOrder && max_abs(term) < tol) break;
    }
    for (int i = 0; i < squarings; ++i) sum = sum * sum;
    return sum;
}

double det(const Matrix& a) {
    require_square(a, "det");
    return a.partialPivLu().determinant();
}

Vector solve(const Matrix& a, const Vector& b) {
    require_square(a, "solve");
    if (b.size() != a.rows()) throw InvalidArgument("solve: dimension mismatch");
    const auto lu = a.partialPivLu();
    if (std::abs(lu.determinant()) <= 1e-12) throw SingularMatrix("solve: |det| <= 1e-12");
    return lu.solve(b);
}

} // namespace liepush::linalg
