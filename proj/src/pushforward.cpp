#include "liepush/pushforward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "liepush/errors.hpp"

namespace liepush {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kMaxResample = 100;

std::span<const double> as_span(const linalg::Vector& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

double branch_log_term(const PushforwardDistribution& dist, const linalg::Vector& x) {
    return gaussian_log_density(as_span(x), as_span(dist.scale())) +
           log_jacobian_t<double>(dist.group(), as_span(x));
}

} // namespace

PushforwardDistribution::PushforwardDistribution(GroupDescriptor group, linalg::Vector scale, GroupElement location,
                                                 int truncation, BaseKind base)
    : group_(std::move(group)), location_(std::move(location)), truncation_(truncation), base_(base) {
    const int n = group_.algebra_dim();
    if (scale.size() == 1 && n > 1) scale = linalg::Vector::Constant(n, scale[0]);
    if (scale.size() != n) throw InvalidArgument("scale must have one entry per algebra coordinate");
    if (!scale.allFinite() || (scale.array() <= 0.0).any()) throw InvalidArgument("scale must be positive");
    if (truncation_ < 0) throw InvalidArgument("truncation K must be >= 0");
    if (base_ != BaseKind::gaussian) {
        throw InvalidArgument("the tanh-compact base is provided by FlowModel, not PushforwardDistribution");
    }
    validate_element(group_, location_);
    scale_ = std::move(scale);
    location_inv_ = inverse(location_);
}

PushforwardDistribution::PushforwardDistribution(GroupDescriptor group, double scale, int truncation)
    : PushforwardDistribution(group, linalg::Vector::Constant(1, scale), group.identity(), truncation) {}

PushforwardDistribution PushforwardDistribution::with_location(GroupElement location) const {
    return {group_, scale_, std::move(location), truncation_, base_};
}

PushforwardDistribution PushforwardDistribution::with_truncation(int K) const {
    return {group_, scale_, location_, K, base_};
}

double base_log_density(const PushforwardDistribution& dist, const AlgebraVector& x) {
    if (x.coords.size() != dist.group().algebra_dim()) throw InvalidArgument("base_log_density: wrong dimension");
    if (!x.coords.allFinite()) throw InvalidArgument("base_log_density: non-finite input");
    return gaussian_log_density(as_span(x.coords), as_span(dist.scale()));
}

double log_sum_exp(std::span<const double> terms) {
    double m = -std::numeric_limits<double>::infinity();
    for (double t : terms) m = std::max(m, t);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double t : terms) s += std::exp(t - m);
    return m + std::log(s);
}

bool is_regular_noise(const GroupDescriptor& G, const linalg::Vector& eps) {
    if (G.kind() == GroupKind::torus) return true;
    const double theta = eps.head<3>().norm();
    // Reduced rotation angle of exp(eps) in [0, pi].
    const double reduced = std::abs(std::remainder(theta, 2.0 * kPi));
    const bool on_shell = theta > kPi && reduced <= kShellBand;
    return reduced >= 2.0 * kIdentityBand && reduced < kPi - 2.0 * kAntipodalBand && !on_shell;
}

namespace {

double offset_log_density(const PushforwardDistribution& dist, const GroupElement& h) {
    const auto branches = preimage(dist.group(), h, dist.truncation());
    std::vector<double> terms;
    terms.reserve(branches.size());
    for (const auto& x : branches) terms.push_back(branch_log_term(dist, x.coords));
    return log_sum_exp(terms);
}

} // namespace

SampleRecord sample(const PushforwardDistribution& dist, Rng& rng) {
    const auto& G = dist.group();
    const int n = G.algebra_dim();
    for (int attempt = 0; attempt < kMaxResample; ++attempt) {
        linalg::Vector eps(n);
        for (int i = 0; i < n; ++i) eps[i] = dist.scale()[i] * rng.normal();
        if (!is_regular_noise(G, eps)) continue;
        AlgebraVector noise{G.tag(), eps};
        const GroupElement h = exp_map(G, noise);
        // Evaluated at the offset h so the value does not depend on the location.
        const double lp = offset_log_density(dist, h);
        return {compose(dist.location(), h), std::move(noise), lp};
    }
    throw SingularElement("sample: 100 consecutive draws landed in the singular guard band");
}

double log_density(const PushforwardDistribution& dist, const GroupElement& g) {
    return offset_log_density(dist, compose(dist.location_inverse(), g));
}

double log_density_from_algebra(const PushforwardDistribution& dist, const linalg::Vector& x) {
    const auto& G = dist.group();
    const int K = dist.truncation();
    std::vector<double> terms;
    if (G.kind() == GroupKind::torus) {
        return log_density(dist, exp_map(G, {G.tag(), x}));
    }
    const double theta = x.head<3>().norm();
    if (G.kind() == GroupKind::se3 || theta < kIdentityBand) {
        return log_density(dist, exp_map(G, {G.tag(), x}));
    }
    // Principal representative first, then the shells (theta + 2 pi k) u.
    const double reduced = std::remainder(theta, 2.0 * kPi);
    const Eigen::Vector3d axis = x.head<3>() / theta;
    terms.reserve(static_cast<std::size_t>(2 * K + 1));
    for (int k = -K; k <= K; ++k) {
        const linalg::Vector xk = (reduced + 2.0 * kPi * k) * axis;
        terms.push_back(branch_log_term(dist, xk));
    }
    return log_sum_exp(terms);
}

double normalization_quadrature(const PushforwardDistribution& dist, int resolution) {
    if (resolution < 10) throw InvalidArgument("normalization_quadrature: resolution must be >= 10 points per axis");
    const auto& G = dist.group();
    if (G.kind() == GroupKind::torus && G.algebra_dim() == 1) {
        const double h = 2.0 * kPi / resolution;
        double total = 0.0;
        for (int i = 0; i < resolution; ++i) {
            const double a = -kPi + (i + 0.5) * h;
            linalg::Vector x(1);
            x[0] = a;
            const GroupElement g = compose(dist.location(), exp_map(G, {G.tag(), x}));
            total += std::exp(log_density(dist, g));
        }
        return total * h;
    }
    if (G.kind() != GroupKind::so3) {
        throw InvalidArgument("normalization_quadrature: supported groups are t1 and so3");
    }
    const double dt = kPi / resolution;
    const double dp = kPi / resolution;
    const double da = 2.0 * kPi / resolution;
    double total = 0.0;
    for (int i = 0; i < resolution; ++i) {
        const double theta = (i + 0.5) * dt;
        // Haar weight in exponential coordinates: (2 - 2 cos theta)/theta^2 times theta^2 sin(psi).
        const double radial = 2.0 - 2.0 * std::cos(theta);
        for (int j = 0; j < resolution; ++j) {
            const double psi = (j + 0.5) * dp;
            const double w = radial * std::sin(psi);
            for (int l = 0; l < resolution; ++l) {
                const double phi = (l + 0.5) * da;
                linalg::Vector x(3);
                x << theta * std::sin(psi) * std::cos(phi), theta * std::sin(psi) * std::sin(phi),
                    theta * std::cos(psi);
                const GroupElement g = compose(dist.location(), exp_map(G, {G.tag(), x}));
                total += w * std::exp(log_density(dist, g));
            }
        }
    }
    return total * dt * dp * da;
}

McEstimate entropy_mc(const PushforwardDistribution& dist, int n, Rng& rng) {
    if (n < 1) throw InvalidArgument("entropy_mc: n must be >= 1");
    double sum = 0.0;
    double sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = -sample(dist, rng).log_density;
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n;
    const double var = n > 1 ? std::max(0.0, (sum2 - n * mean * mean) / (n - 1)) : 0.0;
    return {mean, std::sqrt(var / n)};
}

PathwiseGradient pathwise_grad_sigma(const PushforwardDistribution& dist, const GroupFunction& f, int n, Rng& rng) {
    if (n < 1) throw InvalidArgument("pathwise_grad_sigma: n must be >= 1");
    const auto& G = dist.group();
    const int d = G.algebra_dim();
    const int m = G.matrix_size();

    TMatrix<double> loc(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) loc(i, j) = dist.location().matrix(i, j);

    linalg::Vector sum = linalg::Vector::Zero(d);
    linalg::Vector sum2 = linalg::Vector::Zero(d);
    double objective = 0.0;
    std::vector<double> eps(static_cast<std::size_t>(d));
    for (int s = 0; s < n; ++s) {
        for (auto& e : eps) e = rng.normal();
        ad::Tape tape;
        std::vector<ad::Var> sigma;
        std::vector<ad::Var> x;
        for (int i = 0; i < d; ++i) {
            sigma.push_back(tape.variable(dist.scale()[i]));
            x.push_back(sigma.back() * eps[static_cast<std::size_t>(i)]);
        }
        const auto g = multiply(loc, exp_map_t<ad::Var>(G, x));
        const ad::Var y = f(g);
        objective += y.value();
        const auto adj = tape.adjoints(y);
        for (int i = 0; i < d; ++i) {
            const double gi = y.is_constant() ? 0.0 : adj[static_cast<std::size_t>(sigma[static_cast<std::size_t>(i)].index())];
            sum[i] += gi;
            sum2[i] += gi * gi;
        }
    }
    PathwiseGradient out;
    out.mean = sum / n;
    out.objective = objective / n;
    out.std_error = linalg::Vector::Zero(d);
    if (n > 1) {
        for (int i = 0; i < d; ++i) {
            const double var = std::max(0.0, (sum2[i] - n * out.mean[i] * out.mean[i]) / (n - 1));
            out.std_error[i] = std::sqrt(var / n);
        }
    }
    if (!out.mean.allFinite()) throw NonFinite("pathwise_grad_sigma: non-finite gradient");
    return out;
}

} // namespace liepush
