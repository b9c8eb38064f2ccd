#pragma once

// Pose-inference experiments on SO(3): symmetric point scenes, a
// Metropolis-Hastings reference posterior, variational inference with an
// LI-Flow, and conditional maximum-likelihood pose estimation.

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "liepush/groups.hpp"
#include "liepush/liflow.hpp"
#include "liepush/pushforward.hpp"
#include "liepush/rng.hpp"

namespace liepush {

enum class SymmetryKind { line, cyclic };

/// How a posed scene is turned into an observation vector.
///   points   rotated template points, concatenated in order (3N values)
///   moments  weighted first, second and third moments of the rotated
///            points (3 + 9 + 27 values); invariant to point order
enum class EmbeddingKind { points, moments };

struct SymmetricScene {
    std::vector<Eigen::Vector3d> template_points;
    std::vector<double> weights; // one per point, summing to 1
    SymmetryKind symmetry = SymmetryKind::cyclic;
    int order = 1;
    Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
    double noise_std = 0.0;
    EmbeddingKind embedding = EmbeddingKind::points;
};

/// Rotation by `angle` about the unit vector `axis`.
Eigen::Matrix3d rotation_about(const Eigen::Vector3d& axis, double angle);

/// Cyclic scene: replaces the point set by its weighted orbit under the
/// rotations 2 pi k / order about `axis` (each image carries weight
/// 1/order), so the scene's moments are the orbit average of the moments of
/// the input. Order 1 returns the points unchanged. Scenes of order > 1 use
/// the moment embedding.
SymmetricScene symmetrize(const std::vector<Eigen::Vector3d>& points, int order, const Eigen::Vector3d& axis,
                          double noise_std = 0.0);

/// Scene of ordered points on a common line through the origin; symmetric
/// under every rotation about that line.
SymmetricScene line_scene(const std::vector<Eigen::Vector3d>& points, double noise_std = 0.0);

/// Finite symmetry elements of the scene (the identity alone for a line scene).
std::vector<Eigen::Matrix3d> symmetry_elements(const SymmetricScene& scene);

int observation_dim(const SymmetricScene& scene);

template <class T>
std::vector<T> observe_t(const SymmetricScene& scene, const TMatrix<T>& rotation);

/// Noise-free observation of the scene posed by `rotation`.
linalg::Vector observe(const SymmetricScene& scene, const Eigen::Matrix3d& rotation);

/// Isotropic Gaussian likelihood log p(x | g) with standard deviation
/// scene.noise_std on every observation coordinate.
template <class T>
T log_likelihood_t(const SymmetricScene& scene, std::span<const double> observation, const TMatrix<T>& rotation);

double log_likelihood(const SymmetricScene& scene, const linalg::Vector& observation, const Eigen::Matrix3d& rotation);

/// Haar-uniform rotation: QR of a 3x3 standard Gaussian matrix with the signs
/// of diag(R) moved into Q, then a column flip if det Q = -1.
Eigen::Matrix3d uniform_rotation(Rng& rng);

/// log of the Haar volume of SO(3) (8 pi^2).
double log_haar_volume_so3();

// --- datasets ---

struct PoseRecord {
    linalg::Vector observation;
    Eigen::Matrix3d pose;      // label g
    Eigen::Matrix3d base_pose; // noise-free pose behind the observation
    int observation_id = 0;    // records sharing an id share their observation
};

struct PoseDataset {
    std::vector<PoseRecord> records;
};

struct DatasetConfig {
    /// Std of each algebra coordinate of the pose perturbation eps.
    double pose_noise_std = 0.1;
    /// When false every pose is the identity.
    bool uniform_poses = true;
    /// 0: every record has its own observation g'(x0) with g' = exp(eps) g.
    /// M > 0: M observations g_j(x0); each record's label is exp(eps) g_j d
    /// with d drawn from the scene's symmetry elements.
    int distinct_observations = 0;
};

PoseDataset generate_dataset(const SymmetricScene& scene, int n, Rng& rng, const DatasetConfig& config = {});

/// Labels permuted across records (negative control).
PoseDataset shuffle_labels(const PoseDataset& data, Rng& rng);

// --- Metropolis-Hastings ---

struct ChainState {
    std::vector<GroupElement> samples;
    double acceptance_rate = 0.0;
    long accepted = 0;
    long total = 0;
};

struct MhConfig {
    long steps = 100000;
    double proposal_scale = 0.2;
    double burn_in = 0.2;
    int thin = 10;
};

using LogTarget = std::function<double(const GroupElement&)>;

/// Random-walk chain with proposals exp(eps) g, eps ~ N(0, scale^2 I). Keeps
/// every thin-th state after the burn-in fraction.
ChainState mh_chain(const GroupDescriptor& G, const LogTarget& log_target, const GroupElement& init,
                    const MhConfig& config, Rng& rng);

// --- statistics ---

/// Pearson chi-square p-value of observed counts against expected
/// probabilities (dof = bins - 1).
double chi_square_p_value(std::span<const double> counts, std::span<const double> probabilities);

/// Kolmogorov-Smirnov p-value of samples against Uniform(0, 1).
double ks_uniform_p_value(std::vector<double> samples);

/// Biased (V-statistic) maximum mean discrepancy with the kernel
/// exp(-d(a, b)^2 / (2 bandwidth^2)) on the rotation distance.
double mmd_rotation(const std::vector<Eigen::Matrix3d>& a, const std::vector<Eigen::Matrix3d>& b, double bandwidth);

struct RotationCluster {
    std::vector<int> members;
    Eigen::Matrix3d center;
    double fraction = 0.0;
};

/// Single-linkage clusters of rotations joined below `threshold` rad,
/// largest first. Centers are chordal means projected onto SO(3).
std::vector<RotationCluster> cluster_rotations(const std::vector<Eigen::Matrix3d>& samples, double threshold);

/// Chordal mean of rotations projected onto SO(3).
Eigen::Matrix3d projected_mean(const std::vector<Eigen::Matrix3d>& rotations);

/// Distance from R to the circle subgroup of rotations about `axis`.
double circle_residual(const Eigen::Matrix3d& r, const Eigen::Vector3d& axis);

// --- variational inference ---

struct ViConfig {
    FlowConfig flow;
    FitConfig fit{.steps = 1500, .learning_rate = 3e-3};
    int batch = 32;
    /// Likelihood weight rises linearly from 0 to 1 over these steps.
    int anneal_steps = 0;
    int eval_samples = 2000;
    MhConfig mh;
    double mmd_bandwidth = 0.3;
    int mmd_samples = 2000;
};

struct ViReport {
    std::vector<double> elbo_trace;
    double final_elbo = 0.0; // mean over eval samples
    double final_elbo_std_error = 0.0;
    double q_entropy = 0.0;
    std::string checkpoint;
    std::vector<Eigen::Matrix3d> q_samples;
    std::vector<Eigen::Matrix3d> mh_samples;
    double mh_acceptance = 0.0;
    double mmd_q_mh = 0.0;
    double mmd_mh_mh = 0.0;
};

/// Fits q(g) to p(g | x) by maximizing ELBO = E_q[log p(x|g) + log p(g) - log q(g)]
/// with a uniform prior, using pathwise gradients through the flow. The
/// reference chains start at the most likely flow sample and its symmetry
/// images; two independent chain sets give the self-MMD baseline.
ViReport vi_fit(const SymmetricScene& scene, const linalg::Vector& observation, const ViConfig& config, Rng& rng);

/// Geometry of the fitted posterior against the scene's known symmetry set.
struct PosteriorShape {
    /// Line scenes: 90th percentile of the distance to the circle
    /// g_true R_axis(phi), for the flow and the reference chain.
    double q_residual_p90 = 0.0;
    double mh_residual_p90 = 0.0;
    /// Cyclic scenes: clusters of the flow samples above the minimum fraction.
    int q_clusters = 0;
    std::vector<double> q_cluster_fractions;
    std::vector<double> q_cluster_distances;
    double q_max_pose_error = 0.0;
};

PosteriorShape posterior_shape(const SymmetricScene& scene, const Eigen::Matrix3d& true_pose, const ViReport& report,
                               double cluster_threshold = 0.3, double min_cluster_fraction = 0.05);

/// log of E_q[p(x|g) p(g) / q(g)] by importance sampling from the flow.
McEstimate importance_log_evidence(const FlowModel& model, const SymmetricScene& scene,
                                   const linalg::Vector& observation, int n, Rng& rng);

/// ELBO of the flow as a posterior approximation, with its standard error.
McEstimate elbo_estimate(const FlowModel& model, const SymmetricScene& scene, const linalg::Vector& observation,
                         int n, Rng& rng);

// --- conditional maximum likelihood ---

struct MleConfig {
    FlowConfig flow{.r_squash = 1.8 * std::numbers::pi};
    FitConfig fit{.steps = 2000, .learning_rate = 2e-3};
    int batch = 64;
    int mode_observations = 5;
    int mode_samples = 300;
    double cluster_threshold = 0.3;
    /// Clusters smaller than this fraction of the samples are not counted as modes.
    double min_cluster_fraction = 0.05;
};

struct ObservationModes {
    Eigen::Matrix3d true_pose;
    int count = 0;
    std::vector<Eigen::Matrix3d> centers;
    std::vector<double> fractions;
    std::vector<double> mutual_distances;
    double max_pose_error = 0.0; // worst center-to-nearest-symmetric-pose distance
    double covered_fraction = 0.0;
};

struct MleReport {
    std::vector<double> loss_trace;
    double heldout_log_likelihood = 0.0;
    std::vector<ObservationModes> modes;
    std::string checkpoint;
};

/// Maximizes the mean conditional log-likelihood log q(g | x) of the
/// training labels, then reports the held-out average log-likelihood and a
/// mode analysis for the first `mode_observations` distinct training
/// observations.
MleReport mle_fit(const SymmetricScene& scene, const PoseDataset& train, const PoseDataset& heldout,
                  const MleConfig& config, Rng& rng);

/// Samples q(g | observation) and clusters the draws; `pose` is the
/// noise-free pose whose symmetric images are the expected modes.
ObservationModes analyze_modes(const FlowModel& model, const SymmetricScene& scene,
                               const linalg::Vector& observation, const Eigen::Matrix3d& pose,
                               const MleConfig& config, Rng& rng);

double mean_log_likelihood(const FlowModel& model, const PoseDataset& data);

// --- template definitions ---

template <class T>
std::vector<T> observe_t(const SymmetricScene& scene, const TMatrix<T>& rotation) {
    const std::size_t n = scene.template_points.size();
    std::vector<std::array<T, 3>> rotated(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& p = scene.template_points[k];
        for (int i = 0; i < 3; ++i) {
            rotated[k][static_cast<std::size_t>(i)] = rotation(i, 0) * p[0] + rotation(i, 1) * p[1] + rotation(i, 2) * p[2];
        }
    }
    std::vector<T> out;
    if (scene.embedding == EmbeddingKind::points) {
        out.reserve(3 * n);
        for (const auto& q : rotated) out.insert(out.end(), q.begin(), q.end());
        return out;
    }
    out.assign(39, T(0.0));
    for (std::size_t k = 0; k < n; ++k) {
        const double w = scene.weights[k];
        const auto& q = rotated[k];
        for (int i = 0; i < 3; ++i) {
            const T wi = q[static_cast<std::size_t>(i)] * w;
            out[static_cast<std::size_t>(i)] = out[static_cast<std::size_t>(i)] + wi;
            for (int j = 0; j < 3; ++j) {
                const T wij = wi * q[static_cast<std::size_t>(j)];
                auto& m2 = out[static_cast<std::size_t>(3 + 3 * i + j)];
                m2 = m2 + wij;
                for (int l = 0; l < 3; ++l) {
                    auto& m3 = out[static_cast<std::size_t>(12 + 9 * i + 3 * j + l)];
                    m3 = m3 + wij * q[static_cast<std::size_t>(l)];
                }
            }
        }
    }
    return out;
}

template <class T>
T log_likelihood_t(const SymmetricScene& scene, std::span<const double> observation, const TMatrix<T>& rotation) {
    constexpr double kHalfLog2Pi = 0.91893853320467274178;
    const auto f = observe_t(scene, rotation);
    const double s = scene.noise_std;
    T acc(0.0);
    for (std::size_t i = 0; i < f.size(); ++i) {
        const T r = (f[i] - observation[i]) * (1.0 / s);
        acc = acc + r * r;
    }
    return acc * -0.5 - static_cast<double>(f.size()) * (std::log(s) + kHalfLog2Pi);
}

} // namespace liepush
