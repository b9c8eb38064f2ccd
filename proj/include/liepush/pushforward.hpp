#pragma once

// Reparameterizable distributions on a Lie group: draw eps ~ N(0, diag sigma^2)
// in the algebra, map through exp, then left-multiply by a location g_mu.
// The density with respect to the Haar measure of the orthonormal-basis
// metric is
//
//     q(g) = sum_{x : exp(x) = g_mu^-1 g} r(x | sigma) J(x),
//
// truncated to preimage branches |k| <= K.

#include <functional>

#include "liepush/autodiff.hpp"
#include "liepush/groups.hpp"
#include "liepush/rng.hpp"
#include "liepush/volume.hpp"

namespace liepush {

enum class BaseKind { gaussian, tanh_compact };

inline constexpr int kDefaultTruncation = 10;

class PushforwardDistribution {
public:
    /// `scale` has one entry per algebra coordinate, or a single entry that is
    /// broadcast. Only the gaussian base is handled here; the tanh-compact
    /// base belongs to FlowModel.
    PushforwardDistribution(GroupDescriptor group, linalg::Vector scale, GroupElement location,
                            int truncation = kDefaultTruncation, BaseKind base = BaseKind::gaussian);
    PushforwardDistribution(GroupDescriptor group, double scale, int truncation = kDefaultTruncation);

    const GroupDescriptor& group() const { return group_; }
    const linalg::Vector& scale() const { return scale_; }
    const GroupElement& location() const { return location_; }
    const GroupElement& location_inverse() const { return location_inv_; }
    int truncation() const { return truncation_; }
    BaseKind base() const { return base_; }

    PushforwardDistribution with_location(GroupElement location) const;
    PushforwardDistribution with_truncation(int K) const;

private:
    GroupDescriptor group_;
    linalg::Vector scale_;
    GroupElement location_;
    GroupElement location_inv_;
    int truncation_;
    BaseKind base_;
};

struct SampleRecord {
    GroupElement group_element;
    AlgebraVector algebra_noise;
    double log_density = 0.0;
};

struct McEstimate {
    double mean = 0.0;
    double std_error = 0.0;
};

/// log N(x; 0, diag sigma^2).
double base_log_density(const PushforwardDistribution& dist, const AlgebraVector& x);

template <class T>
T gaussian_log_density(std::span<const T> x, std::span<const T> sigma);

/// True when exp(eps) is a regular point for density evaluation (rotation
/// part away from the identity, the antipodal band and the singular shells).
bool is_regular_noise(const GroupDescriptor& G, const linalg::Vector& eps);

/// One reparameterized draw. Resamples up to 100 times if the noise lands in
/// the singular guard band.
SampleRecord sample(const PushforwardDistribution& dist, Rng& rng);

/// Log density at g with max-shifted log-sum-exp over preimage branches.
double log_density(const PushforwardDistribution& dist, const GroupElement& g);

/// Log density at exp(x) for an algebra point of the identity-located
/// distribution, summing over the branches generated from x itself.
double log_density_from_algebra(const PushforwardDistribution& dist, const linalg::Vector& x);

/// Integral of the density over the group, pulled back to the principal
/// domain and weighted by the Haar volume 1/J. Supports T^1 (midpoint rule on
/// (-pi, pi]) and SO(3) (midpoint rule in spherical coordinates on the ball
/// of radius pi). `resolution` is the number of points per axis (>= 10).
double normalization_quadrature(const PushforwardDistribution& dist, int resolution);

/// -(1/n) sum log q(g_i) over n samples, with its standard error.
McEstimate entropy_mc(const PushforwardDistribution& dist, int n, Rng& rng);

/// Scalar function of a group element, written against differentiable
/// matrix entries.
using GroupFunction = std::function<ad::Var(const TMatrix<ad::Var>&)>;

struct PathwiseGradient {
    linalg::Vector mean;
    linalg::Vector std_error;
    double objective = 0.0;
};

/// Monte Carlo estimate of d/d sigma E[f(g_mu exp(sigma * eps))] at fixed
/// standard draws eps. Draws are taken from `rng` as n consecutive blocks of
/// algebra_dim standard normals.
PathwiseGradient pathwise_grad_sigma(const PushforwardDistribution& dist, const GroupFunction& f, int n, Rng& rng);

/// log of sum exp(terms), shifted by the maximum. -inf for an empty or
/// all -inf input.
double log_sum_exp(std::span<const double> terms);

template <class T>
T gaussian_log_density(std::span<const T> x, std::span<const T> sigma) {
    using std::log;
    constexpr double kHalfLog2Pi = 0.91893853320467274178;
    T acc(0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T z = x[i] / sigma[i];
        acc = acc - z * z * 0.5 - log(sigma[i]) - kHalfLog2Pi;
    }
    return acc;
}

} // namespace liepush
