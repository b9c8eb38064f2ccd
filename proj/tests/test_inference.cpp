#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "liepush/errors.hpp"
#include "liepush/inference.hpp"
#include "test_support.hpp"

using namespace liepush;
using namespace liepush::testing;

namespace {

const std::vector<Eigen::Vector3d> kObject{{1.0, 0.0, 0.5}, {0.2, 0.7, -0.6}};

// Batch-means standard error for a correlated chain.
double batch_means_se(const std::vector<double>& xs, int batches = 20) {
    const std::size_t per = xs.size() / static_cast<std::size_t>(batches);
    std::vector<double> means;
    for (int b = 0; b < batches; ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < per; ++i) s += xs[static_cast<std::size_t>(b) * per + i];
        means.push_back(s / static_cast<double>(per));
    }
    double m = 0.0;
    for (double x : means) m += x;
    m /= batches;
    double v = 0.0;
    for (double x : means) v += (x - m) * (x - m);
    return std::sqrt(v / (batches - 1) / batches);
}

// Angle of the rotation about `axis` that best explains r (its twist).
double twist_angle(const Eigen::Matrix3d& r, const Eigen::Vector3d& axis) {
    const Eigen::Vector3d a = axis.normalized();
    const Eigen::Vector3d ref = a.unitOrthogonal();
    const Eigen::Vector3d img = r * ref;
    const Eigen::Vector3d other = a.cross(ref);
    return std::atan2(img.dot(other), img.dot(ref));
}

} // namespace

TEST(Symmetrize, OrderOneKeepsPoints) {
    const auto scene = symmetrize(kObject, 1, Eigen::Vector3d::UnitZ());
    ASSERT_EQ(scene.template_points.size(), kObject.size());
    for (std::size_t i = 0; i < kObject.size(); ++i) EXPECT_EQ(scene.template_points[i], kObject[i]);
    EXPECT_EQ(scene.embedding, EmbeddingKind::points);
}

TEST(Symmetrize, PointOnAxisIsFixed) {
    const std::vector<Eigen::Vector3d> on_axis{{0.0, 0.0, 2.0}};
    const auto scene = symmetrize(on_axis, 5, Eigen::Vector3d::UnitZ());
    for (const auto& p : scene.template_points) EXPECT_LT((p - on_axis[0]).norm(), 1e-15);
    const auto plain = symmetrize(on_axis, 1, Eigen::Vector3d::UnitZ());
    auto moments = plain;
    moments.embedding = EmbeddingKind::moments;
    EXPECT_LT((observe(scene, Eigen::Matrix3d::Identity()) - observe(moments, Eigen::Matrix3d::Identity()))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-15);
}

TEST(Symmetrize, GeneratorInvariance) {
    const Eigen::Vector3d axis(0.3, -0.2, 1.0);
    const auto scene = symmetrize(kObject, 3, axis);
    const Eigen::Matrix3d gen = rotation_about(axis, 2 * kPi / 3);
    const auto base = observe(scene, Eigen::Matrix3d::Identity());
    EXPECT_LT((observe(scene, gen) - base).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GT((observe(scene, rotation_about(axis, 1.0)) - base).cwiseAbs().maxCoeff(), 1e-2);
    EXPECT_THROW(symmetrize(kObject, 3, Eigen::Vector3d::Zero()), InvalidArgument);
    EXPECT_THROW(symmetrize(kObject, 0, axis), InvalidArgument);
}

TEST(Symmetrize, LikelihoodOfSymmetricPosesIsEqual) {
    Rng rng(111);
    const auto scene = symmetrize(kObject, 3, Eigen::Vector3d::UnitZ(), 0.2);
    for (int i = 0; i < 20; ++i) {
        const Eigen::Matrix3d g = uniform_rotation(rng);
        const auto x = observe(scene, g);
        const Eigen::Matrix3d probe = uniform_rotation(rng);
        for (const auto& d : symmetry_elements(scene)) {
            EXPECT_NEAR(log_likelihood(scene, x, g * d), log_likelihood(scene, x, g), 1e-12);
            EXPECT_NEAR(log_likelihood(scene, x, probe * d), log_likelihood(scene, x, probe), 1e-12);
        }
    }
}

TEST(LineScene, RejectsOffLinePoints) {
    EXPECT_THROW(line_scene({{0, 0, 1}, {0, 1, 0}}), InvalidArgument);
    const auto scene = line_scene({{0, 0, 1}, {0, 0, -0.5}}, 0.1);
    EXPECT_EQ(observation_dim(scene), 6);
    const auto x = observe(scene, Eigen::Matrix3d::Identity());
    for (double a : {0.3, 1.7, -2.9}) {
        EXPECT_NEAR(log_likelihood(scene, x, rotation_about(scene.axis, a)),
                    log_likelihood(scene, x, Eigen::Matrix3d::Identity()), 1e-12);
    }
}

TEST(Dataset, NoiseFreeIdentityPoses) {
    Rng rng(112);
    auto scene = symmetrize(kObject, 1, Eigen::Vector3d::UnitZ(), 0.0);
    DatasetConfig config;
    config.pose_noise_std = 0.0;
    config.uniform_poses = false;
    const auto data = generate_dataset(scene, 10, rng, config);
    for (const auto& r : data.records) {
        EXPECT_EQ(r.pose, Eigen::Matrix3d::Identity());
        for (std::size_t i = 0; i < kObject.size(); ++i)
            for (int k = 0; k < 3; ++k) EXPECT_EQ(r.observation[static_cast<Eigen::Index>(3 * i) + k], kObject[i][k]);
    }
}

TEST(Dataset, HaarMoments) {
    Rng rng(113);
    const int n = 20000;
    Eigen::Matrix3d mean = Eigen::Matrix3d::Zero();
    for (int i = 0; i < n; ++i) {
        const Eigen::Matrix3d r = uniform_rotation(rng);
        EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
        EXPECT_LT((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
        mean += r;
    }
    mean /= n;
    EXPECT_LT(mean.cwiseAbs().maxCoeff(), 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST(Dataset, SymmetricPosesShareObservations) {
    Rng rng(114);
    const auto scene = symmetrize(kObject, 3, Eigen::Vector3d::UnitZ(), 0.0);
    for (int i = 0; i < 20; ++i) {
        const Eigen::Matrix3d g = uniform_rotation(rng);
        for (const auto& d : symmetry_elements(scene)) {
            EXPECT_LT((observe(scene, g * d) - observe(scene, g)).cwiseAbs().maxCoeff(), 1e-12);
        }
    }
    DatasetConfig config;
    config.distinct_observations = 4;
    const auto data = generate_dataset(scene, 40, rng, config);
    for (const auto& r : data.records) {
        const auto& first = data.records[static_cast<std::size_t>(r.observation_id)];
        EXPECT_EQ(r.observation, first.observation);
        double nearest = 10.0;
        for (const auto& d : symmetry_elements(scene)) nearest = std::min(nearest, rotation_distance(r.pose, r.base_pose * d));
        EXPECT_LT(nearest, 1.0);
    }
}

TEST(Dataset, ShuffleKeepsObservations) {
    Rng rng(115);
    const auto scene = symmetrize(kObject, 1, Eigen::Vector3d::UnitZ(), 0.05);
    const auto data = generate_dataset(scene, 50, rng);
    const auto shuffled = shuffle_labels(data, rng);
    int moved = 0;
    for (std::size_t i = 0; i < data.records.size(); ++i) {
        EXPECT_EQ(shuffled.records[i].observation, data.records[i].observation);
        if (shuffled.records[i].pose != data.records[i].pose) ++moved;
    }
    EXPECT_GT(moved, 40);
}

TEST(MetropolisHastings, ConstantTargetAcceptsEverything) {
    Rng rng(116);
    const auto G = GroupDescriptor::so3();
    MhConfig config;
    config.steps = 1000;
    const auto chain = mh_chain(G, [](const GroupElement&) { return 0.0; }, G.identity(), config, rng);
    EXPECT_EQ(chain.acceptance_rate, 1.0);
    EXPECT_EQ(chain.total, 1000);
    EXPECT_EQ(chain.samples.size(), 80u);
}

TEST(MetropolisHastings, NonFiniteInitThrows) {
    Rng rng(117);
    const auto G = GroupDescriptor::so3();
    EXPECT_THROW(mh_chain(G, [](const GroupElement&) { return -INFINITY; }, G.identity(), MhConfig{}, rng), NonFinite);
}

TEST(MetropolisHastings, PushforwardTargetMoment) {
    Rng rng(118);
    const auto G = GroupDescriptor::so3();
    const PushforwardDistribution target(G, 0.4);
    const LogTarget lt = [&](const GroupElement& g) {
        Eigen::VectorXd eps = log_principal(G, g).coords;
        return is_regular_noise(G, eps) ? log_density(target, g) : -INFINITY;
    };
    MhConfig config;
    config.steps = 200000;
    const auto chain = mh_chain(G, lt, exp_map(G, G.vector(Eigen::Vector3d(0.1, 0.1, 0.1))), config, rng);
    std::vector<double> theta;
    for (const auto& s : chain.samples) theta.push_back(rotation_angle(s.matrix));
    double mean = 0.0;
    for (double t : theta) mean += t;
    mean /= static_cast<double>(theta.size());
    Rng draw(119);
    double reference = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) reference += rotation_angle(sample(target, draw).group_element.matrix);
    reference /= n;
    EXPECT_LT(std::abs(mean - reference), 3 * batch_means_se(theta) + 1e-3);
}

TEST(MetropolisHastings, CircleHistogramMatchesQuadrature) {
    Rng rng(120);
    const auto G = GroupDescriptor::torus(1);
    const double sigma = 0.8;
    const PushforwardDistribution target(G, sigma, 20);
    MhConfig config;
    config.steps = 100000;
    config.thin = 1;
    config.proposal_scale = 1.5;
    const auto chain =
        mh_chain(G, [&](const GroupElement& g) { return log_density(target, g); }, G.identity(), config, rng);
    const int bins = 20;
    std::vector<double> counts(bins, 0.0);
    for (const auto& s : chain.samples) {
        const double a = std::atan2(s.matrix(1, 0), s.matrix(0, 0));
        counts[static_cast<std::size_t>(std::min(bins - 1, static_cast<int>((a + kPi) / (2 * kPi) * bins)))] += 1.0;
    }
    // Thin the histogram to roughly independent draws before testing.
    const double keep = 0.1;
    for (auto& c : counts) c = std::round(c * keep);
    std::vector<double> probs(bins, 0.0);
    const int sub = 400;
    for (int b = 0; b < bins; ++b) {
        for (int i = 0; i < sub; ++i) {
            const double a = -kPi + (b + (i + 0.5) / sub) * 2 * kPi / bins;
            Eigen::VectorXd x(1);
            x << a;
            probs[static_cast<std::size_t>(b)] += std::exp(log_density(target, exp_map(G, G.vector(x)))) * 2 * kPi / bins / sub;
        }
    }
    EXPECT_GT(chi_square_p_value(counts, probs), 1e-3);
}

TEST(MetropolisHastings, LineSymmetryTwistIsUniform) {
    Rng rng(121);
    const auto scene = line_scene({{0, 0, 1}, {0, 0, -0.5}}, 0.1);
    const auto x = observe(scene, Eigen::Matrix3d::Identity());
    const auto G = GroupDescriptor::so3();
    const LogTarget lt = [&](const GroupElement& g) { return log_likelihood(scene, x, g.matrix); };
    MhConfig config;
    config.steps = 200000;
    config.proposal_scale = 0.5;
    config.thin = 100;
    const auto chain = mh_chain(G, lt, G.identity(), config, rng);
    std::vector<double> u;
    for (const auto& s : chain.samples) u.push_back((twist_angle(s.matrix, scene.axis) + kPi) / (2 * kPi));
    EXPECT_GT(ks_uniform_p_value(u), 1e-3);
}

TEST(Statistics, KolmogorovSmirnov) {
    Rng rng(122);
    std::vector<double> uniform, skewed;
    for (int i = 0; i < 2000; ++i) {
        uniform.push_back(rng.uniform());
        skewed.push_back(std::pow(rng.uniform(), 1.3));
    }
    EXPECT_GT(ks_uniform_p_value(uniform), 1e-3);
    EXPECT_LT(ks_uniform_p_value(skewed), 1e-3);
}

TEST(Statistics, ChiSquare) {
    EXPECT_NEAR(chi_square_p_value(std::vector<double>{50, 50}, std::vector<double>{0.5, 0.5}), 1.0, 1e-12);
    // stat = 4 with 1 dof
    EXPECT_NEAR(chi_square_p_value(std::vector<double>{60, 40}, std::vector<double>{0.5, 0.5}), 0.0455002638963584, 1e-12);
}

TEST(Statistics, MmdAndClusters) {
    Rng rng(123);
    const auto G = GroupDescriptor::so3();
    std::vector<Eigen::Matrix3d> a, b;
    const Eigen::Matrix3d c1 = rotation_about(Eigen::Vector3d::UnitZ(), 0.0);
    const Eigen::Matrix3d c2 = rotation_about(Eigen::Vector3d::UnitZ(), 2 * kPi / 3);
    for (int i = 0; i < 200; ++i) {
        const auto jitter = [&] { return exp_map(G, G.vector(Eigen::Vector3d(0.03 * rng.normal(), 0.03 * rng.normal(), 0.03 * rng.normal()))).matrix; };
        a.push_back(jitter() * (i % 4 == 0 ? c2 : c1));
        b.push_back(jitter() * c1);
    }
    EXPECT_EQ(mmd_rotation(a, a, 0.3), 0.0);
    EXPECT_GT(mmd_rotation(a, b, 0.3), 0.1);
    const auto clusters = cluster_rotations(a, 0.3);
    ASSERT_EQ(clusters.size(), 2u);
    EXPECT_NEAR(clusters[0].fraction, 0.75, 1e-12);
    EXPECT_LT(rotation_distance(clusters[0].center, c1), 0.02);
    EXPECT_LT(rotation_distance(clusters[1].center, c2), 0.02);
    EXPECT_NEAR(circle_residual(rotation_about(Eigen::Vector3d::UnitZ(), 1.2), Eigen::Vector3d::UnitZ()), 0.0, 1e-7);
    EXPECT_NEAR(circle_residual(rotation_about(Eigen::Vector3d::UnitX(), 0.4), Eigen::Vector3d::UnitZ()), 0.4, 1e-12);
}

TEST(Vi, FlatLikelihoodGivesUniformPosterior) {
    Rng rng(124);
    const auto scene = line_scene({{0, 0, 1}, {0, 0, -0.5}}, 100.0);
    const auto x = observe(scene, Eigen::Matrix3d::Identity());
    ViConfig config;
    config.flow.r_squash = 1.8 * kPi;
    config.fit.steps = 1500;
    config.fit.learning_rate = 5e-3;
    config.eval_samples = 4000;
    config.mh.steps = 2000;
    config.mmd_samples = 200;
    const auto report = vi_fit(scene, x, config, rng);
    EXPECT_NEAR(report.q_entropy, log_haar_volume_so3(), 0.2);
}

TEST(Vi, ElboBelowEvidence) {
    Rng rng(125);
    const auto scene = line_scene({{0, 0, 1}, {0, 0, -0.5}}, 0.3);
    const auto x = observe(scene, Eigen::Matrix3d::Identity());
    ViConfig config;
    config.fit.steps = 300;
    config.eval_samples = 500;
    config.mh.steps = 2000;
    config.mmd_samples = 200;
    const auto report = vi_fit(scene, x, config, rng);
    const auto model = load_checkpoint(report.checkpoint);
    const auto elbo = elbo_estimate(model, scene, x, 4000, rng);
    const auto evidence = importance_log_evidence(model, scene, x, 4000, rng);
    EXPECT_LE(elbo.mean, evidence.mean + 3 * (elbo.std_error + evidence.std_error));
    EXPECT_EQ(report.elbo_trace.size(), 300u);
}

TEST(Mle, ShuffledLabelsLoseLikelihood) {
    Rng rng(126);
    const auto scene = symmetrize(kObject, 1, Eigen::Vector3d::UnitZ(), 0.02);
    const auto data = generate_dataset(scene, 1200, rng);
    PoseDataset train, heldout;
    train.records.assign(data.records.begin(), data.records.begin() + 1000);
    heldout.records.assign(data.records.begin() + 1000, data.records.end());
    MleConfig config;
    config.fit.steps = 300;
    config.fit.learning_rate = 3e-3;
    config.batch = 32;
    config.mode_observations = 1;
    config.mode_samples = 100;
    Rng fit_a(127), fit_b(127);
    const auto matched = mle_fit(scene, train, heldout, config, fit_a);
    const auto shuffled = mle_fit(scene, shuffle_labels(train, rng), heldout, config, fit_b);
    EXPECT_GE(matched.heldout_log_likelihood - shuffled.heldout_log_likelihood, 1.0);
}
