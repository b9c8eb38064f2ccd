#include "liepush/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include <Eigen/Geometry>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <boost/math/distributions/chi_squared.hpp>

#include "liepush/errors.hpp"

namespace liepush {

namespace {

using ad::Var;

constexpr double kPi = std::numbers::pi;

std::span<const double> as_span(const linalg::Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

Eigen::Matrix3d as_rotation(const linalg::Matrix& m) { return m.topLeftCorner<3, 3>(); }

GroupElement as_element(const Eigen::Matrix3d& r) { return {GroupTag{GroupKind::so3, 0}, linalg::Matrix(r)}; }

TMatrix<double> as_tmatrix(const Eigen::Matrix3d& r) {
    TMatrix<double> out(3, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out(i, j) = r(i, j);
    return out;
}

Eigen::Matrix3d exp_so3(const Eigen::Vector3d& w) {
    const auto r = kernels::so3_exp(w.data());
    Eigen::Matrix3d out;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out(i, j) = r[static_cast<std::size_t>(3 * i + j)];
    return out;
}

Eigen::Vector3d normal3(Rng& rng, double scale) {
    Eigen::Vector3d v;
    for (int i = 0; i < 3; ++i) v[i] = scale * rng.normal();
    return v;
}

// Cosine-free rotation distance; accurate to ~1e-8 rad near zero, which is
// ample for kernels and cluster thresholds.
double fast_distance(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
    const double c = std::clamp((a.cwiseProduct(b).sum() - 1.0) * 0.5, -1.0, 1.0);
    return std::acos(c);
}

std::vector<Eigen::Matrix3d> spaced_subset(const std::vector<Eigen::Matrix3d>& xs, int n) {
    if (n <= 0 || static_cast<std::size_t>(n) >= xs.size()) return xs;
    std::vector<Eigen::Matrix3d> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        out.push_back(xs[static_cast<std::size_t>(static_cast<double>(i) * xs.size() / n)]);
    }
    return out;
}

double mean_of(const std::vector<double>& xs) {
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double std_error_of(const std::vector<double>& xs, double mean) {
    if (xs.size() < 2) return 0.0;
    double s = 0.0;
    for (double x : xs) s += (x - mean) * (x - mean);
    return std::sqrt(s / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
}

void require_scene(const SymmetricScene& scene) {
    if (scene.template_points.empty()) throw InvalidArgument("scene: template_points must not be empty");
    if (scene.weights.size() != scene.template_points.size()) throw InvalidArgument("scene: one weight per point");
    if (!(scene.noise_std >= 0.0)) throw InvalidArgument("scene: noise_std must be >= 0");
    if (scene.order < 1) throw InvalidArgument("scene: order must be >= 1");
}

struct FlowEvalDraw {
    Eigen::Matrix3d rotation;
    double log_q;
};

} // namespace

Eigen::Matrix3d rotation_about(const Eigen::Vector3d& axis, double angle) {
    const double n = axis.norm();
    if (!(n > 0.0)) throw InvalidArgument("rotation_about: zero axis");
    return Eigen::AngleAxisd(angle, axis / n).toRotationMatrix();
}

SymmetricScene symmetrize(const std::vector<Eigen::Vector3d>& points, int order, const Eigen::Vector3d& axis,
                          double noise_std) {
    if (order < 1) throw InvalidArgument("symmetrize: order must be >= 1");
    if (!(axis.norm() > 0.0)) throw InvalidArgument("symmetrize: zero axis");
    if (points.empty()) throw InvalidArgument("symmetrize: no points");
    if (!(noise_std >= 0.0)) throw InvalidArgument("symmetrize: noise_std must be >= 0");
    SymmetricScene scene;
    scene.symmetry = SymmetryKind::cyclic;
    scene.order = order;
    scene.axis = axis.normalized();
    scene.noise_std = noise_std;
    scene.embedding = order > 1 ? EmbeddingKind::moments : EmbeddingKind::points;
    const double w = 1.0 / static_cast<double>(order * static_cast<int>(points.size()));
    for (int k = 0; k < order; ++k) {
        const Eigen::Matrix3d r = rotation_about(scene.axis, 2.0 * kPi * k / order);
        for (const auto& p : points) {
            scene.template_points.push_back(k == 0 ? p : Eigen::Vector3d(r * p));
            scene.weights.push_back(w);
        }
    }
    return scene;
}

SymmetricScene line_scene(const std::vector<Eigen::Vector3d>& points, double noise_std) {
    if (points.empty()) throw InvalidArgument("line_scene: no points");
    if (!(noise_std >= 0.0)) throw InvalidArgument("line_scene: noise_std must be >= 0");
    const auto longest = std::max_element(points.begin(), points.end(),
                                          [](const auto& a, const auto& b) { return a.norm() < b.norm(); });
    if (!(longest->norm() > 0.0)) throw InvalidArgument("line_scene: all points are at the origin");
    const Eigen::Vector3d axis = longest->normalized();
    for (const auto& p : points) {
        if (p.cross(axis).norm() > 1e-12 * std::max(1.0, p.norm())) {
            throw InvalidArgument("line_scene: points are not on a common line through the origin");
        }
    }
    SymmetricScene scene;
    scene.template_points = points;
    scene.weights.assign(points.size(), 1.0 / static_cast<double>(points.size()));
    scene.symmetry = SymmetryKind::line;
    scene.axis = axis;
    scene.noise_std = noise_std;
    scene.embedding = EmbeddingKind::points;
    return scene;
}

std::vector<Eigen::Matrix3d> symmetry_elements(const SymmetricScene& scene) {
    if (scene.symmetry == SymmetryKind::line) return {Eigen::Matrix3d::Identity()};
    std::vector<Eigen::Matrix3d> out;
    for (int k = 0; k < scene.order; ++k) out.push_back(rotation_about(scene.axis, 2.0 * kPi * k / scene.order));
    return out;
}

int observation_dim(const SymmetricScene& scene) {
    return scene.embedding == EmbeddingKind::points ? 3 * static_cast<int>(scene.template_points.size()) : 39;
}

linalg::Vector observe(const SymmetricScene& scene, const Eigen::Matrix3d& rotation) {
    require_scene(scene);
    const auto f = observe_t<double>(scene, as_tmatrix(rotation));
    return Eigen::Map<const linalg::Vector>(f.data(), static_cast<Eigen::Index>(f.size()));
}

double log_likelihood(const SymmetricScene& scene, const linalg::Vector& observation, const Eigen::Matrix3d& rotation) {
    require_scene(scene);
    if (!(scene.noise_std > 0.0)) throw InvalidArgument("log_likelihood: noise_std must be positive");
    if (observation.size() != observation_dim(scene)) throw InvalidArgument("log_likelihood: wrong observation size");
    return log_likelihood_t<double>(scene, as_span(observation), as_tmatrix(rotation));
}

Eigen::Matrix3d uniform_rotation(Rng& rng) {
    Eigen::Matrix3d a;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) a(i, j) = rng.normal();
    const Eigen::HouseholderQR<Eigen::Matrix3d> qr(a);
    Eigen::Matrix3d q = qr.householderQ();
    const Eigen::Matrix3d r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int i = 0; i < 3; ++i) {
        if (r(i, i) < 0.0) q.col(i) *= -1.0;
    }
    if (q.determinant() < 0.0) q.col(0) *= -1.0;
    return q;
}

double log_haar_volume_so3() { return std::log(8.0 * kPi * kPi); }

PoseDataset generate_dataset(const SymmetricScene& scene, int n, Rng& rng, const DatasetConfig& config) {
    require_scene(scene);
    if (n < 1) throw InvalidArgument("generate_dataset: n must be >= 1");
    if (!(config.pose_noise_std >= 0.0)) throw InvalidArgument("generate_dataset: pose_noise_std must be >= 0");
    if (config.distinct_observations < 0) throw InvalidArgument("generate_dataset: distinct_observations must be >= 0");
    const int F = observation_dim(scene);
    auto draw_pose = [&] { return config.uniform_poses ? uniform_rotation(rng) : Eigen::Matrix3d::Identity(); };
    auto noisy_observation = [&](const Eigen::Matrix3d& g) {
        linalg::Vector x = observe(scene, g);
        for (int i = 0; i < F; ++i) x[i] += scene.noise_std * rng.normal();
        return x;
    };

    PoseDataset data;
    data.records.reserve(static_cast<std::size_t>(n));
    if (config.distinct_observations == 0) {
        for (int i = 0; i < n; ++i) {
            const Eigen::Matrix3d g = draw_pose();
            const Eigen::Matrix3d noisy = exp_so3(normal3(rng, config.pose_noise_std)) * g;
            data.records.push_back({noisy_observation(noisy), g, g, i});
        }
        return data;
    }
    const auto elements = symmetry_elements(scene);
    std::vector<Eigen::Matrix3d> bases;
    std::vector<linalg::Vector> observations;
    for (int j = 0; j < config.distinct_observations; ++j) {
        bases.push_back(draw_pose());
        observations.push_back(noisy_observation(bases.back()));
    }
    for (int i = 0; i < n; ++i) {
        const auto j = static_cast<std::size_t>(i % config.distinct_observations);
        const auto& d = elements[static_cast<std::size_t>(rng.below(elements.size()))];
        const Eigen::Matrix3d label = exp_so3(normal3(rng, config.pose_noise_std)) * bases[j] * d;
        data.records.push_back({observations[j], label, bases[j], static_cast<int>(j)});
    }
    return data;
}

PoseDataset shuffle_labels(const PoseDataset& data, Rng& rng) {
    PoseDataset out = data;
    std::vector<Eigen::Matrix3d> poses;
    for (const auto& r : data.records) poses.push_back(r.pose);
    std::shuffle(poses.begin(), poses.end(), rng.engine());
    for (std::size_t i = 0; i < poses.size(); ++i) out.records[i].pose = poses[i];
    return out;
}

// --- Metropolis-Hastings ---

ChainState mh_chain(const GroupDescriptor& G, const LogTarget& log_target, const GroupElement& init,
                    const MhConfig& config, Rng& rng) {
    if (config.steps < 1) throw InvalidArgument("mh_chain: steps must be >= 1");
    if (!(config.proposal_scale > 0.0)) throw InvalidArgument("mh_chain: proposal_scale must be positive");
    if (config.thin < 1) throw InvalidArgument("mh_chain: thin must be >= 1");
    if (!(config.burn_in >= 0.0 && config.burn_in < 1.0)) throw InvalidArgument("mh_chain: burn_in must be in [0, 1)");
    validate_element(G, init);
    GroupElement current = init;
    double lp = log_target(current);
    if (!std::isfinite(lp)) throw NonFinite("mh_chain: log target is not finite at the initial state");

    const auto burn = static_cast<long>(std::floor(config.burn_in * static_cast<double>(config.steps)));
    const int n = G.algebra_dim();
    ChainState state;
    linalg::Vector eps(n);
    for (long t = 0; t < config.steps; ++t) {
        for (int i = 0; i < n; ++i) eps[i] = config.proposal_scale * rng.normal();
        GroupElement proposal = compose(exp_map(G, {G.tag(), eps}), current);
        const double lp_new = log_target(proposal);
        const double u = rng.uniform();
        if (!std::isnan(lp_new) && std::log(u) < lp_new - lp) {
            current = std::move(proposal);
            lp = lp_new;
            ++state.accepted;
        }
        ++state.total;
        if (t >= burn && (t - burn) % config.thin == 0) state.samples.push_back(current);
    }
    state.acceptance_rate = static_cast<double>(state.accepted) / static_cast<double>(state.total);
    return state;
}

// --- statistics ---

double chi_square_p_value(std::span<const double> counts, std::span<const double> probabilities) {
    if (counts.size() != probabilities.size() || counts.size() < 2) {
        throw InvalidArgument("chi_square_p_value: need matching arrays with at least two bins");
    }
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    double stat = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const double e = total * probabilities[i];
        if (!(e > 0.0)) throw InvalidArgument("chi_square_p_value: expected counts must be positive");
        stat += (counts[i] - e) * (counts[i] - e) / e;
    }
    const boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
    return boost::math::cdf(boost::math::complement(dist, stat));
}

double ks_uniform_p_value(std::vector<double> samples) {
    if (samples.empty()) throw InvalidArgument("ks_uniform_p_value: no samples");
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double x = std::clamp(samples[i], 0.0, 1.0);
        d = std::max({d, (static_cast<double>(i) + 1.0) / n - x, x - static_cast<double>(i) / n});
    }
    const double sn = std::sqrt(n);
    const double lambda = (sn + 0.12 + 0.11 / sn) * d;
    if (lambda < 0.2) return 1.0;
    double p = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        p += (k % 2 == 1 ? 2.0 : -2.0) * term;
        if (term < 1e-16) break;
    }
    return std::clamp(p, 0.0, 1.0);
}

double mmd_rotation(const std::vector<Eigen::Matrix3d>& a, const std::vector<Eigen::Matrix3d>& b, double bandwidth) {
    if (a.empty() || b.empty()) throw InvalidArgument("mmd_rotation: empty sample set");
    if (!(bandwidth > 0.0)) throw InvalidArgument("mmd_rotation: bandwidth must be positive");
    const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
    auto mean_kernel = [&](const std::vector<Eigen::Matrix3d>& x, const std::vector<Eigen::Matrix3d>& y) {
        double s = 0.0;
        for (const auto& p : x)
            for (const auto& q : y) {
                const double d = fast_distance(p, q);
                s += std::exp(-d * d * inv);
            }
        return s / (static_cast<double>(x.size()) * static_cast<double>(y.size()));
    };
    const double m2 = mean_kernel(a, a) + mean_kernel(b, b) - 2.0 * mean_kernel(a, b);
    return std::sqrt(std::max(0.0, m2));
}

Eigen::Matrix3d projected_mean(const std::vector<Eigen::Matrix3d>& rotations) {
    if (rotations.empty()) throw InvalidArgument("projected_mean: no rotations");
    Eigen::Matrix3d sum = Eigen::Matrix3d::Zero();
    for (const auto& r : rotations) sum += r;
    const Eigen::JacobiSVD<Eigen::Matrix3d> svd(sum, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    return svd.matrixU() * d * svd.matrixV().transpose();
}

std::vector<RotationCluster> cluster_rotations(const std::vector<Eigen::Matrix3d>& samples, double threshold) {
    const int n = static_cast<int>(samples.size());
    std::vector<int> parent(static_cast<std::size_t>(n));
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int i) {
        while (parent[static_cast<std::size_t>(i)] != i) {
            parent[static_cast<std::size_t>(i)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
            i = parent[static_cast<std::size_t>(i)];
        }
        return i;
    };
    // d(a, b) < threshold  <=>  trace(a^T b) > 1 + 2 cos(threshold)
    const double min_trace = 1.0 + 2.0 * std::cos(threshold);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            if (samples[static_cast<std::size_t>(i)].cwiseProduct(samples[static_cast<std::size_t>(j)]).sum() > min_trace) {
                parent[static_cast<std::size_t>(find(i))] = find(j);
            }
        }
    std::vector<RotationCluster> clusters;
    std::vector<int> slot(static_cast<std::size_t>(n), -1);
    for (int i = 0; i < n; ++i) {
        const int root = find(i);
        if (slot[static_cast<std::size_t>(root)] < 0) {
            slot[static_cast<std::size_t>(root)] = static_cast<int>(clusters.size());
            clusters.emplace_back();
        }
        clusters[static_cast<std::size_t>(slot[static_cast<std::size_t>(root)])].members.push_back(i);
    }
    for (auto& c : clusters) {
        std::vector<Eigen::Matrix3d> members;
        for (int i : c.members) members.push_back(samples[static_cast<std::size_t>(i)]);
        c.center = projected_mean(members);
        c.fraction = static_cast<double>(c.members.size()) / static_cast<double>(n);
    }
    std::stable_sort(clusters.begin(), clusters.end(),
                     [](const auto& a, const auto& b) { return a.members.size() > b.members.size(); });
    return clusters;
}

double circle_residual(const Eigen::Matrix3d& r, const Eigen::Vector3d& axis) {
    const Eigen::Vector3d a = axis.normalized();
    return std::acos(std::clamp(a.dot(r * a), -1.0, 1.0));
}

// --- variational inference ---

namespace {

std::vector<FlowEvalDraw> flow_draws(const FlowModel& model, std::span<const double> cond, int n, Rng& rng) {
    std::vector<FlowEvalDraw> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto s = flow_sample(model, cond, rng);
        out.push_back({as_rotation(s.element.matrix), s.log_prob});
    }
    return out;
}

std::vector<double> log_weights(const FlowModel& model, const SymmetricScene& scene, const linalg::Vector& observation,
                                int n, Rng& rng) {
    if (n < 1) throw InvalidArgument("n must be >= 1");
    const double log_prior = -log_haar_volume_so3();
    std::vector<double> w;
    for (const auto& d : flow_draws(model, {}, n, rng)) {
        w.push_back(log_likelihood(scene, observation, d.rotation) + log_prior - d.log_q);
    }
    return w;
}

} // namespace

McEstimate elbo_estimate(const FlowModel& model, const SymmetricScene& scene, const linalg::Vector& observation,
                         int n, Rng& rng) {
    const auto w = log_weights(model, scene, observation, n, rng);
    const double m = mean_of(w);
    return {m, std_error_of(w, m)};
}

McEstimate importance_log_evidence(const FlowModel& model, const SymmetricScene& scene,
                                   const linalg::Vector& observation, int n, Rng& rng) {
    const auto w = log_weights(model, scene, observation, n, rng);
    const double m = *std::max_element(w.begin(), w.end());
    std::vector<double> e;
    for (double x : w) e.push_back(std::exp(x - m));
    const double mean = mean_of(e);
    // Delta method: se(log mean) = se(mean) / mean.
    return {m + std::log(mean), std_error_of(e, mean) / mean};
}

ViReport vi_fit(const SymmetricScene& scene, const linalg::Vector& observation, const ViConfig& config, Rng& rng) {
    require_scene(scene);
    if (!(scene.noise_std > 0.0)) throw InvalidArgument("vi_fit: scene noise_std must be positive");
    if (observation.size() != observation_dim(scene)) throw InvalidArgument("vi_fit: wrong observation size");
    if (config.batch < 1) throw InvalidArgument("vi_fit: batch must be >= 1");
    if (config.eval_samples < 1) throw InvalidArgument("vi_fit: eval_samples must be >= 1");

    const auto G = GroupDescriptor::so3();
    FlowConfig fc = config.flow;
    fc.conditioner_dim = 0;
    FlowModel model(G, fc, rng);
    const double log_prior = -log_haar_volume_so3();
    const auto obs = as_span(observation);

    ViReport report;
    const FlowObjective objective = [&](ad::Tape&, std::span<const Var> params, int step) {
        const double beta =
            config.anneal_steps > 0 ? std::min(1.0, static_cast<double>(step + 1) / config.anneal_steps) : 1.0;
        Var total(0.0);
        double elbo = 0.0;
        for (int b = 0; b < config.batch; ++b) {
            const std::array<double, 3> z{rng.normal(), rng.normal(), rng.normal()};
            const auto draw = flow_rsample<Var>(model, params, z, {});
            const auto rotation = exp_map_t<Var>(G, std::span<const Var>(draw.algebra));
            const Var ll = log_likelihood_t<Var>(scene, obs, rotation);
            total = total + ll * beta - draw.log_prob;
            elbo += ll.value() + log_prior - draw.log_prob.value();
        }
        report.elbo_trace.push_back(elbo / config.batch);
        return total * (-1.0 / config.batch);
    };
    flow_fit(model, objective, config.fit);

    const auto draws = flow_draws(model, {}, config.eval_samples, rng);
    std::vector<double> w;
    std::vector<double> lq;
    double best = -std::numeric_limits<double>::infinity();
    Eigen::Matrix3d best_rotation = Eigen::Matrix3d::Identity();
    for (const auto& d : draws) {
        const double ll = log_likelihood(scene, observation, d.rotation);
        w.push_back(ll + log_prior - d.log_q);
        lq.push_back(d.log_q);
        report.q_samples.push_back(d.rotation);
        if (ll > best) {
            best = ll;
            best_rotation = d.rotation;
        }
    }
    report.final_elbo = mean_of(w);
    report.final_elbo_std_error = std_error_of(w, report.final_elbo);
    report.q_entropy = -mean_of(lq);
    report.checkpoint = save_checkpoint(model);

    const LogTarget target = [&](const GroupElement& g) {
        return log_likelihood(scene, observation, as_rotation(g.matrix));
    };
    const auto elements = symmetry_elements(scene);
    MhConfig per_start = config.mh;
    per_start.steps = std::max(1L, config.mh.steps / static_cast<long>(elements.size()));
    std::vector<Eigen::Matrix3d> set_a;
    std::vector<Eigen::Matrix3d> set_b;
    long accepted = 0;
    long total = 0;
    for (auto* set : {&set_a, &set_b}) {
        for (const auto& d : elements) {
            const auto chain = mh_chain(G, target, as_element(best_rotation * d), per_start, rng);
            for (const auto& s : chain.samples) set->push_back(as_rotation(s.matrix));
            accepted += chain.accepted;
            total += chain.total;
        }
    }
    report.mh_acceptance = static_cast<double>(accepted) / static_cast<double>(total);
    report.mh_samples = set_a;
    const auto qa = spaced_subset(report.q_samples, config.mmd_samples);
    const auto ma = spaced_subset(set_a, config.mmd_samples);
    const auto mb = spaced_subset(set_b, config.mmd_samples);
    report.mmd_q_mh = mmd_rotation(qa, ma, config.mmd_bandwidth);
    report.mmd_mh_mh = mmd_rotation(mb, ma, config.mmd_bandwidth);
    return report;
}

PosteriorShape posterior_shape(const SymmetricScene& scene, const Eigen::Matrix3d& true_pose, const ViReport& report,
                               double cluster_threshold, double min_cluster_fraction) {
    PosteriorShape out;
    if (scene.symmetry == SymmetryKind::line) {
        auto p90 = [&](const std::vector<Eigen::Matrix3d>& samples) {
            if (samples.empty()) return 0.0;
            std::vector<double> r;
            r.reserve(samples.size());
            for (const auto& g : samples) r.push_back(circle_residual(true_pose.transpose() * g, scene.axis));
            const auto k = static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(r.size()))) - 1;
            std::nth_element(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(k), r.end());
            return r[k];
        };
        out.q_residual_p90 = p90(report.q_samples);
        out.mh_residual_p90 = p90(report.mh_samples);
        return out;
    }
    std::vector<Eigen::Matrix3d> truths;
    for (const auto& d : symmetry_elements(scene)) truths.push_back(true_pose * d);
    std::vector<Eigen::Matrix3d> centers;
    for (const auto& c : cluster_rotations(report.q_samples, cluster_threshold)) {
        if (c.fraction < min_cluster_fraction) continue;
        centers.push_back(c.center);
        out.q_cluster_fractions.push_back(c.fraction);
        double nearest = std::numeric_limits<double>::infinity();
        for (const auto& t : truths) nearest = std::min(nearest, rotation_distance(c.center, t));
        out.q_max_pose_error = std::max(out.q_max_pose_error, nearest);
    }
    out.q_clusters = static_cast<int>(centers.size());
    for (std::size_t i = 0; i < centers.size(); ++i)
        for (std::size_t j = i + 1; j < centers.size(); ++j) {
            out.q_cluster_distances.push_back(rotation_distance(centers[i], centers[j]));
        }
    return out;
}

// --- conditional maximum likelihood ---

double mean_log_likelihood(const FlowModel& model, const PoseDataset& data) {
    if (data.records.empty()) throw InvalidArgument("mean_log_likelihood: empty dataset");
    double s = 0.0;
    for (const auto& r : data.records) s += flow_log_prob(model, as_element(r.pose), as_span(r.observation));
    return s / static_cast<double>(data.records.size());
}

ObservationModes analyze_modes(const FlowModel& model, const SymmetricScene& scene,
                               const linalg::Vector& observation, const Eigen::Matrix3d& pose,
                               const MleConfig& config, Rng& rng) {
    std::vector<Eigen::Matrix3d> samples;
    for (const auto& d : flow_draws(model, as_span(observation), config.mode_samples, rng)) samples.push_back(d.rotation);
    ObservationModes out;
    out.true_pose = pose;
    std::vector<Eigen::Matrix3d> truths;
    for (const auto& d : symmetry_elements(scene)) truths.push_back(pose * d);
    for (const auto& c : cluster_rotations(samples, config.cluster_threshold)) {
        if (c.fraction < config.min_cluster_fraction) continue;
        out.centers.push_back(c.center);
        out.fractions.push_back(c.fraction);
        out.covered_fraction += c.fraction;
        double nearest = std::numeric_limits<double>::infinity();
        for (const auto& t : truths) nearest = std::min(nearest, rotation_distance(c.center, t));
        out.max_pose_error = std::max(out.max_pose_error, nearest);
    }
    out.count = static_cast<int>(out.centers.size());
    for (std::size_t i = 0; i < out.centers.size(); ++i)
        for (std::size_t j = i + 1; j < out.centers.size(); ++j) {
            out.mutual_distances.push_back(rotation_distance(out.centers[i], out.centers[j]));
        }
    return out;
}

MleReport mle_fit(const SymmetricScene& scene, const PoseDataset& train, const PoseDataset& heldout,
                  const MleConfig& config, Rng& rng) {
    require_scene(scene);
    if (train.records.empty()) throw InvalidArgument("mle_fit: empty training set");
    if (config.batch < 1) throw InvalidArgument("mle_fit: batch must be >= 1");
    const int F = observation_dim(scene);
    for (const auto* data : {&train, &heldout}) {
        for (const auto& r : data->records) {
            if (r.observation.size() != F) throw InvalidArgument("mle_fit: observation size does not match the scene");
        }
    }
    const auto G = GroupDescriptor::so3();
    FlowConfig fc = config.flow;
    fc.conditioner_dim = F;
    FlowModel model(G, fc, rng);

    // In-support preimage branches of every training label.
    const double r = model.squash().radius;
    std::vector<std::vector<std::array<double, 3>>> branches(train.records.size());
    for (std::size_t i = 0; i < train.records.size(); ++i) {
        for (const auto& x : preimage(G, as_element(train.records[i].pose), model.branch_truncation())) {
            if (x.coords.norm() < r - 1e-9) branches[i].push_back({x.coords[0], x.coords[1], x.coords[2]});
        }
        if (branches[i].empty()) throw InvalidArgument("mle_fit: a training label lies outside the flow support");
    }

    MleReport report;
    const FlowObjective objective = [&](ad::Tape&, std::span<const Var> params, int) {
        Var total(0.0);
        // Records that share an observation share its embedding within a step.
        std::unordered_map<int, std::vector<Var>> embeddings;
        for (int b = 0; b < config.batch; ++b) {
            const auto i = static_cast<std::size_t>(rng.below(train.records.size()));
            const auto& rec = train.records[i];
            auto it = embeddings.find(rec.observation_id);
            if (it == embeddings.end()) {
                it = embeddings.emplace(rec.observation_id, flow_embedding<Var>(model, params, as_span(rec.observation)))
                         .first;
            }
            const auto& emb = it->second;
            std::vector<Var> terms;
            double m = -std::numeric_limits<double>::infinity();
            for (const auto& x : branches[i]) {
                const std::array<Var, 3> xv{x[0], x[1], x[2]};
                terms.push_back(flow_branch_log_prob<Var>(model, params, xv, emb));
                m = std::max(m, terms.back().value());
            }
            Var s(0.0);
            for (const auto& t : terms) s = s + ad::exp(t - m);
            total = total + ad::log(s) + m;
        }
        return total * (-1.0 / config.batch);
    };
    report.loss_trace = flow_fit(model, objective, config.fit).loss_trace;
    if (!heldout.records.empty()) report.heldout_log_likelihood = mean_log_likelihood(model, heldout);
    std::vector<int> seen;
    for (const auto& rec : train.records) {
        if (static_cast<int>(seen.size()) >= config.mode_observations) break;
        if (std::find(seen.begin(), seen.end(), rec.observation_id) != seen.end()) continue;
        seen.push_back(rec.observation_id);
        report.modes.push_back(analyze_modes(model, scene, rec.observation, rec.base_pose, config, rng));
    }
    report.checkpoint = save_checkpoint(model);
    return report;
}

} // namespace liepush
