#include "liepush/volume.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "liepush/errors.hpp"

namespace liepush {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double shell_distance(double theta) {
    if (theta < std::numbers::pi) return std::numeric_limits<double>::infinity();
    const double m = std::round(theta / kTwoPi);
    return std::abs(theta - m * kTwoPi);
}

} // namespace

void require_regular(const GroupDescriptor& G, const AlgebraVector& v, double band) {
    if (G.kind() == GroupKind::torus) return;
    const double theta = rotation_norm(G, v.coords);
    if (shell_distance(theta) <= band) {
        throw SingularShell("rotation norm " + std::to_string(theta) + " lies on a singular shell 2 pi m");
    }
}

double jacobian_closed(const GroupDescriptor& G, const AlgebraVector& v) {
    require_regular(G, v);
    const double t2 = v.coords.head(G.kind() == GroupKind::torus ? 0 : 3).squaredNorm();
    switch (G.kind()) {
    case GroupKind::torus: return 1.0;
    case GroupKind::so3: return kernels::so3_volume(t2);
    case GroupKind::se3: {
        const double j = kernels::so3_volume(t2);
        return j * j;
    }
    }
    return 1.0;
}

double log_jacobian_closed(const GroupDescriptor& G, const AlgebraVector& v) {
    require_regular(G, v);
    const std::span<const double> c(v.coords.data(), static_cast<std::size_t>(v.coords.size()));
    return log_jacobian_t<double>(G, c);
}

double jacobian_series(const GroupDescriptor& G, const AlgebraVector& v, int terms) {
    if (terms < 1) throw InvalidArgument("jacobian_series: terms must be >= 1");
    const linalg::Matrix a = ad_matrix(G, v);
    const auto n = a.rows();
    linalg::Matrix power = linalg::Matrix::Identity(n, n);
    linalg::Matrix series = linalg::Matrix::Identity(n, n);
    double factorial = 1.0;
    for (int k = 1; k < terms; ++k) {
        power = power * a;
        factorial *= static_cast<double>(k + 1);
        series += ((k % 2 == 0) ? 1.0 : -1.0) / factorial * power;
    }
    const double d = linalg::det(series);
    if (!(std::abs(d) > std::numeric_limits<double>::min())) {
        throw SingularShell("jacobian_series: series determinant underflows (singular shell)");
    }
    return 1.0 / d;
}

SpectrumList ad_spectrum(const GroupDescriptor& G, const AlgebraVector& v) {
    const int n = G.algebra_dim();
    SpectrumList out(static_cast<std::size_t>(n), {0.0, 0.0});
    if (G.kind() == GroupKind::torus) return out;
    const double theta = v.coords.head<3>().norm();
    out[1] = {0.0, theta};
    out[2] = {0.0, -theta};
    if (G.kind() == GroupKind::se3) {
        out[4] = {0.0, theta};
        out[5] = {0.0, -theta};
    }
    return out;
}

double jacobian_spectrum(const GroupDescriptor& G, const AlgebraVector& v) {
    require_regular(G, v);
    std::complex<double> prod{1.0, 0.0};
    for (const auto& lambda : ad_spectrum(G, v)) {
        if (std::abs(lambda) == 0.0) continue;
        if (std::abs(lambda) < kernels::kSmallAngle) {
            // lambda / (1 - e^-lambda) = 1 + lambda/2 + lambda^2/12 - lambda^4/720
            const auto l2 = lambda * lambda;
            prod *= 1.0 + lambda / 2.0 + l2 / 12.0 - l2 * l2 / 720.0;
        } else {
            prod *= lambda / (1.0 - std::exp(-lambda));
        }
    }
    return prod.real();
}

double jacobian_numeric(const GroupDescriptor& G, const AlgebraVector& v, double h) {
    if (!(h > 0.0)) throw InvalidArgument("jacobian_numeric: h must be positive");
    require_regular(G, v, 10.0 * h);
    const int n = G.algebra_dim();
    const linalg::Matrix g_inv = inverse(exp_map(G, v)).matrix;

    // Least-squares projection onto the basis: columns are flattened B_i.
    const int m2 = G.matrix_size() * G.matrix_size();
    linalg::Matrix basis(m2, n);
    for (int i = 0; i < n; ++i) {
        basis.col(i) = Eigen::Map<const linalg::Vector>(G.basis()[static_cast<std::size_t>(i)].data(), m2);
    }
    const auto qr = basis.colPivHouseholderQr();

    linalg::Matrix left(n, n);
    for (int i = 0; i < n; ++i) {
        AlgebraVector up = v;
        AlgebraVector down = v;
        up.coords[i] += h;
        down.coords[i] -= h;
        const linalg::Matrix d = (exp_map(G, up).matrix - exp_map(G, down).matrix) / (2.0 * h);
        const linalg::Matrix col = g_inv * d;
        const linalg::Vector flat = Eigen::Map<const linalg::Vector>(col.data(), m2);
        const linalg::Vector coords = qr.solve(flat);
        const double residual = (basis * coords - flat).cwiseAbs().maxCoeff();
        if (residual > 1e-6 * std::max(1.0, flat.cwiseAbs().maxCoeff())) {
            throw SingularMatrix("jacobian_numeric: finite-difference column leaves the algebra (residual " +
                                 std::to_string(residual) + ")");
        }
        left.col(i) = coords;
    }
    return 1.0 / linalg::det(left);
}

} // namespace liepush
