#pragma once

// Closed-form group maps templated on the scalar type, so the same code runs
// on doubles and on ad::Var. Small-angle branches depend only on the squared
// angle to keep derivatives finite at the origin.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <type_traits>
#include <vector>

#include "liepush/autodiff.hpp"

namespace liepush {

/// Row-major dense matrix over an arbitrary scalar.
template <class T>
struct TMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<T> a;

    TMatrix() = default;
    TMatrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r * c), T(0.0)) {}

    static TMatrix identity(int n) {
        TMatrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = T(1.0);
        return m;
    }

    T& operator()(int i, int j) { return a[static_cast<std::size_t>(i * cols + j)]; }
    const T& operator()(int i, int j) const { return a[static_cast<std::size_t>(i * cols + j)]; }
};

template <class T, class U>
auto multiply(const TMatrix<T>& x, const TMatrix<U>& y) {
    using R = decltype(T(0.0) * U(0.0));
    TMatrix<R> out(x.rows, y.cols);
    for (int i = 0; i < x.rows; ++i) {
        for (int j = 0; j < y.cols; ++j) {
            R acc(0.0);
            for (int k = 0; k < x.cols; ++k) acc = acc + x(i, k) * y(k, j);
            out(i, j) = acc;
        }
    }
    return out;
}

namespace kernels {

using ad::value;

inline constexpr double kSmallAngle = 1e-4;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

template <class T>
struct So3Coeffs {
    T a; // sin(t)/t
    T b; // (1 - cos t)/t^2
    T c; // (t - sin t)/t^3
};

/// Rodrigues coefficients as functions of the squared angle.
template <class T>
So3Coeffs<T> so3_coeffs(const T& theta2) {
    using std::cos;
    using std::sin;
    using std::sqrt;
    if (value(theta2) < kSmallAngle * kSmallAngle) {
        const T t2 = theta2;
        const T t4 = t2 * t2;
        return {T(1.0) - t2 / 6.0 + t4 / 120.0,
                T(0.5) - t2 / 24.0 + t4 / 720.0,
                T(1.0 / 6.0) - t2 / 120.0 + t4 / 5040.0};
    }
    const T t = sqrt(theta2);
    const T s = sin(t);
    const T co = cos(t);
    return {s / t, (T(1.0) - co) / theta2, (t - s) / (theta2 * t)};
}

template <class T>
std::array<T, 9> skew(const T* w) {
    return {T(0.0), -w[2], w[1], w[2], T(0.0), -w[0], -w[1], w[0], T(0.0)};
}

template <class T>
T squared_norm3(const T* w) {
    return w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
}

/// I + a W + b W^2 written out with W = w_x.
template <class T>
std::array<T, 9> so3_poly(const T* w, const T& a, const T& b) {
    // W^2 = w w^T - |w|^2 I
    const T n2 = squared_norm3(w);
    std::array<T, 9> r;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            T v = b * w[i] * w[j];
            if (i == j) v = v + T(1.0) - b * n2;
            r[static_cast<std::size_t>(3 * i + j)] = v;
        }
    }
    const auto W = skew(w);
    for (std::size_t k = 0; k < 9; ++k) {
        if (k % 4 != 0) r[k] = r[k] + a * W[k];
    }
    return r;
}

/// Rodrigues formula exp(w_x).
template <class T>
std::array<T, 9> so3_exp(const T* w) {
    const auto c = so3_coeffs(squared_norm3(w));
    return so3_poly(w, c.a, c.b);
}

/// Left Jacobian of SO(3); maps u to the translation part of exp on SE(3).
template <class T>
std::array<T, 9> so3_v(const T* w) {
    const auto c = so3_coeffs(squared_norm3(w));
    return so3_poly(w, c.b, c.c);
}

/// theta^2 / (2 - 2 cos theta): the density factor 1/det(d exp) for SO(3),
/// from the squared angle.
template <class T>
T so3_volume(const T& theta2) {
    using std::sin;
    using std::sqrt;
    if (value(theta2) < kSmallAngle * kSmallAngle) {
        return T(1.0) + theta2 / 12.0 + theta2 * theta2 / 240.0;
    }
    const T half = sqrt(theta2) * 0.5;
    const T s = sin(half);
    return half * half / (s * s);
}

/// log of so3_volume, stable for small angles.
template <class T>
T log_so3_volume(const T& theta2) {
    using std::log;
    if (value(theta2) < kSmallAngle * kSmallAngle) {
        return theta2 / 12.0 + theta2 * theta2 / 1440.0;
    }
    return log(so3_volume(theta2));
}

template <class T>
T clamped_acos(const T& x) {
    if constexpr (std::is_same_v<T, double>) {
        constexpr double kLimit = 1.0 - 1e-12;
        return std::acos(std::clamp(x, -kLimit, kLimit));
    } else {
        return ad::acos(x);
    }
}

/// theta(R) = acos((tr R - 1)/2) on a row-major 3x3 rotation.
template <class T>
T rotation_angle(std::span<const T> r9) {
    return clamped_acos((r9[0] + r9[4] + r9[8] - 1.0) * 0.5);
}

} // namespace kernels
} // namespace liepush
