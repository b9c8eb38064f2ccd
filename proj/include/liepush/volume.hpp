#pragma once

// Volume factor of the exponential map.
//
// All routes return the same quantity: the factor J(x) by which an algebra
// density is multiplied when pushed to the group,
//
//     J(x) = 1 / det( sum_k (-1)^k / (k+1)! ad_x^k ) = prod_{lambda != 0} lambda / (1 - e^-lambda),
//
// so q(g) = sum over preimages x of r(x) J(x). For SO(3) this is
// theta^2 / (2 - 2 cos theta) and for SE(3) its square; the torus has J = 1.

#include <complex>
#include <vector>

#include "liepush/groups.hpp"

namespace liepush {

/// Points whose rotation norm is within this distance of 2 pi m (m >= 1) are
/// on a singular shell where J diverges.
inline constexpr double kShellBand = 1e-6;

using SpectrumList = std::vector<std::complex<double>>;

/// Throws SingularShell if the rotation norm of `v` lies within `band` of a
/// positive multiple of 2 pi.
void require_regular(const GroupDescriptor& G, const AlgebraVector& v, double band = kShellBand);

/// Per-group closed form.
double jacobian_closed(const GroupDescriptor& G, const AlgebraVector& v);

/// log J(x) from the closed form; stable near the origin.
double log_jacobian_closed(const GroupDescriptor& G, const AlgebraVector& v);

/// Closed-form log J templated for differentiation (rotation part only).
template <class T>
T log_jacobian_t(const GroupDescriptor& G, std::span<const T> v);

/// 1 / det of the truncated series sum_{k < terms} (-1)^k/(k+1)! ad^k.
double jacobian_series(const GroupDescriptor& G, const AlgebraVector& v, int terms = 30);

/// Analytically known spectrum of ad_x.
SpectrumList ad_spectrum(const GroupDescriptor& G, const AlgebraVector& v);

/// Product over the nonzero spectrum of lambda / (1 - e^-lambda).
double jacobian_spectrum(const GroupDescriptor& G, const AlgebraVector& v);

/// Finite-difference left Jacobian: columns exp(v)^-1 d exp / d b_i, projected
/// on the basis by least squares; returns 1 / det of that matrix.
double jacobian_numeric(const GroupDescriptor& G, const AlgebraVector& v, double h = 1e-5);

template <class T>
T log_jacobian_t(const GroupDescriptor& G, std::span<const T> v) {
    switch (G.kind()) {
    case GroupKind::torus: return T(0.0);
    case GroupKind::so3: return kernels::log_so3_volume(kernels::squared_norm3(v.data()));
    case GroupKind::se3: return kernels::log_so3_volume(kernels::squared_norm3(v.data())) * 2.0;
    }
    return T(0.0);
}

} // namespace liepush
