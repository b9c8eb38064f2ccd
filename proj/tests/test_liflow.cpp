#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include <json.hpp>

#include "liepush/errors.hpp"
#include "liepush/liflow.hpp"
#include "liepush/pushforward.hpp"
#include "test_support.hpp"

using namespace liepush;
using namespace liepush::testing;

namespace {

using Map = std::function<std::vector<double>(const std::vector<double>&)>;

double fd_log_abs_det(const Map& f, const std::vector<double>& x, double h = 1e-6) {
    const auto n = static_cast<Eigen::Index>(x.size());
    Eigen::MatrixXd jac(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        auto up = x;
        auto down = x;
        up[static_cast<std::size_t>(j)] += h;
        down[static_cast<std::size_t>(j)] -= h;
        const auto a = f(up);
        const auto b = f(down);
        for (Eigen::Index i = 0; i < n; ++i) jac(i, j) = (a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)]) / (2 * h);
    }
    return std::log(std::abs(jac.determinant()));
}

std::vector<double> random_point(Rng& rng, double scale) {
    return {scale * rng.normal(), scale * rng.normal(), scale * rng.normal()};
}

FlowModel make_model(double r, std::uint64_t seed, double weight_scale, int conditioner_dim = 0, int width = 32) {
    Rng rng(seed);
    FlowConfig config;
    config.r_squash = r;
    config.conditioner_dim = conditioner_dim;
    config.hidden_width = width;
    config.embedding_width = width;
    FlowModel model(GroupDescriptor::so3(), config, rng);
    if (weight_scale > 0.0) model.randomize(rng, weight_scale);
    return model;
}

double norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Change of variables written out from the closed forms: base Gaussian, then
// the radial squash and the exp volume factor. Valid for identity couplings.
double squashed_gaussian_log_prob(const std::vector<double>& z, double r) {
    const double rho = norm(z);
    const double t = std::tanh(rho);
    const double log_base = -0.5 * rho * rho - 1.5 * std::log(2 * kPi);
    const double logdet = std::log(r * (1 - t * t)) + 2 * std::log(r * t / rho);
    const double theta = r * t;
    return log_base - logdet + std::log(theta * theta / (2 - 2 * std::cos(theta)));
}

} // namespace

TEST(Squash, OriginAndBound) {
    const RadialSquash s{2.0};
    const std::vector<double> zero{0, 0, 0};
    const auto at0 = squash<double>(s, zero);
    EXPECT_EQ(norm(at0.value), 0.0);
    EXPECT_NEAR(at0.logdet, 3 * std::log(2.0), 1e-15);
    Rng rng(71);
    for (double scale : {0.01, 1.0, 3.0}) {
        for (int i = 0; i < 20; ++i) EXPECT_LT(norm(squash<double>(s, random_point(rng, scale)).value), 2.0);
    }
    EXPECT_LE(norm(squash<double>(s, random_point(rng, 1e3)).value), 2.0);
}

TEST(Squash, LogdetMatchesFiniteDifferences) {
    const RadialSquash s{0.9 * kPi};
    Rng rng(72);
    for (double scale : {1e-3, 0.3, 1.0}) {
        for (int i = 0; i < 10; ++i) {
            const auto v = random_point(rng, scale);
            const Map f = [&](const std::vector<double>& x) { return squash<double>(s, x).value; };
            EXPECT_NEAR(squash<double>(s, v).logdet, fd_log_abs_det(f, v), 1e-6) << scale;
        }
    }
}

TEST(Squash, SmallRadiusSeries) {
    const RadialSquash s{1.5};
    const std::vector<double> v{3e-5, -2e-5, 1e-5};
    const double rho = norm(v);
    const auto w = squash<double>(s, v).value;
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(w[static_cast<std::size_t>(i)], 1.5 * v[static_cast<std::size_t>(i)] * (1 - rho * rho / 3), 1e-20);
}

TEST(Unsquash, RoundTripAndLogdets) {
    const RadialSquash s{1.8 * kPi};
    Rng rng(73);
    for (double scale : {1e-6, 0.1, 1.0}) {
        for (int i = 0; i < 20; ++i) {
            const auto v = random_point(rng, scale);
            const auto fwd = squash<double>(s, v);
            const auto inv = unsquash<double>(s, fwd.value);
            for (int k = 0; k < 3; ++k) EXPECT_NEAR(inv.value[static_cast<std::size_t>(k)], v[static_cast<std::size_t>(k)], 1e-10 * std::max(1.0, norm(v)));
            EXPECT_NEAR(fwd.logdet + inv.logdet, 0.0, 1e-10);
        }
    }
}

TEST(Unsquash, BoundaryIsOutOfSupport) {
    const RadialSquash s{2.0};
    const std::vector<double> w{0.0, 2.0, 0.0};
    EXPECT_THROW(unsquash<double>(s, w), OutOfSupport);
}

TEST(Coupling, ZeroInitIsIdentity) {
    const auto model = make_model(0.9 * kPi, 74, 0.0);
    const auto params = model.parameters().flat();
    const std::vector<double> v{0.3, -1.2, 0.8};
    for (const auto& layer : model.layers()) {
        const auto out = coupling_forward<double>(layer, params, v, {});
        EXPECT_EQ(out.value, v);
        EXPECT_EQ(out.logdet, 0.0);
    }
}

TEST(Coupling, RoundTripAndLogdet) {
    const auto model = make_model(0.9 * kPi, 75, 0.7, 4);
    const auto params = model.parameters().flat();
    Rng rng(76);
    const std::vector<double> cond{0.1, -0.5, 0.9, 0.2};
    const auto emb = flow_embedding<double>(model, params, cond);
    for (const auto& layer : model.layers()) {
        for (int i = 0; i < 10; ++i) {
            const auto v = random_point(rng, 1.0);
            const auto fwd = coupling_forward<double>(layer, params, v, emb);
            const auto inv = coupling_inverse<double>(layer, params, fwd.value, emb);
            for (int k = 0; k < 3; ++k) EXPECT_NEAR(inv.value[static_cast<std::size_t>(k)], v[static_cast<std::size_t>(k)], 1e-10);
            EXPECT_NEAR(fwd.logdet + inv.logdet, 0.0, 1e-12);
            const Map f = [&](const std::vector<double>& x) { return coupling_forward<double>(layer, params, x, emb).value; };
            EXPECT_NEAR(fwd.logdet, fd_log_abs_det(f, v), 1e-6);
        }
    }
}

TEST(Coupling, MasksAlternate) {
    const auto model = make_model(0.9 * kPi, 77, 0.0);
    for (const auto& layer : model.layers()) {
        std::vector<int> all = layer.active;
        all.insert(all.end(), layer.passive.begin(), layer.passive.end());
        std::sort(all.begin(), all.end());
        EXPECT_EQ(all, (std::vector<int>{0, 1, 2}));
        EXPECT_FALSE(layer.active.empty());
        EXPECT_FALSE(layer.passive.empty());
    }
    EXPECT_EQ(model.layers()[0].active.size(), 1u);
    EXPECT_EQ(model.layers()[1].active.size(), 2u);
}

TEST(FlowModel, RejectsSingularRadius) {
    Rng rng(78);
    FlowConfig config;
    config.r_squash = 2 * kPi + 1e-4;
    EXPECT_THROW(FlowModel(GroupDescriptor::so3(), config, rng), InvalidArgument);
    config.r_squash = 0.9 * kPi;
    EXPECT_THROW(FlowModel(GroupDescriptor::se3(), config, rng), InvalidArgument);
}

TEST(FlowSample, IdentityLayersReduceToSquashedGaussian) {
    const double r = 0.9 * kPi;
    const auto model = make_model(r, 79, 0.0);
    Rng rng(80);
    for (int i = 0; i < 200; ++i) {
        const auto s = flow_sample(model, {}, rng);
        EXPECT_NEAR(s.log_prob, squashed_gaussian_log_prob(s.base, r), 1e-9);
    }
}

TEST(FlowSample, SeededDeterminism) {
    const auto model = make_model(1.8 * kPi, 81, 0.1);
    Rng a(82), b(82);
    for (int i = 0; i < 20; ++i) {
        const auto x = flow_sample(model, {}, a);
        const auto y = flow_sample(model, {}, b);
        EXPECT_EQ(x.element.matrix, y.element.matrix);
        EXPECT_EQ(x.log_prob, y.log_prob);
    }
}

TEST(FlowSample, LogProbMatchesDensityEvaluation) {
    for (double r : {0.9 * kPi, 1.8 * kPi}) {
        auto model = make_model(r, 83, 0.1);
        const auto& G = model.group();
        Eigen::VectorXd loc(3);
        loc << 0.2, -0.4, 1.0;
        model.set_location(exp_map(G, G.vector(loc)));
        Rng rng(84);
        for (int i = 0; i < 200; ++i) {
            const auto s = flow_sample(model, {}, rng);
            EXPECT_NEAR(s.log_prob, flow_log_prob(model, s.element, {}), 1e-8) << r;
        }
    }
}

TEST(FlowSample, InverseRecoversBase) {
    const auto model = make_model(1.8 * kPi, 85, 0.1);
    Rng rng(86);
    for (int i = 0; i < 200; ++i) {
        const auto s = flow_sample(model, {}, rng);
        const auto z = flow_inverse(model, s.algebra, {});
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(z[static_cast<std::size_t>(k)], s.base[static_cast<std::size_t>(k)], 1e-8);
    }
}

TEST(FlowSample, RsampleAgreesWithSample) {
    const auto model = make_model(1.8 * kPi, 87, 0.1);
    const auto params = model.parameters().flat();
    Rng rng(88);
    for (int i = 0; i < 100; ++i) {
        const auto s = flow_sample(model, {}, rng);
        const auto d = flow_rsample<double>(model, params, s.base, {});
        for (int k = 0; k < 3; ++k) EXPECT_EQ(d.algebra[static_cast<std::size_t>(k)], s.algebra[static_cast<std::size_t>(k)]);
        EXPECT_NEAR(d.log_prob, s.log_prob, 1e-9);
    }
}

TEST(FlowLogProb, SingleBranchIsDirectChangeOfVariables) {
    const double r = 0.9 * kPi;
    const auto model = make_model(r, 89, 0.0);
    const auto G = model.group();
    Rng rng(90);
    for (int i = 0; i < 100; ++i) {
        const auto x = random_algebra(G, rng, 0.05, 2.5);
        const auto g = exp_map(G, G.vector(x));
        const std::vector<double> xv(x.data(), x.data() + 3);
        const auto z = unsquash<double>(model.squash(), xv).value;
        EXPECT_NEAR(flow_log_prob(model, g, {}), squashed_gaussian_log_prob(z, r), 1e-9);
        EXPECT_EQ(flow_branch_count(model, g), 1);
    }
}

TEST(FlowLogProb, TwoBranchesAtWideRadius) {
    const auto model = make_model(1.8 * kPi, 91, 0.1);
    const auto G = model.group();
    const Eigen::Vector3d axis = Eigen::Vector3d(1, 2, -2).normalized();
    const auto g = exp_map(G, G.vector(Eigen::VectorXd(1.0 * axis)));
    EXPECT_EQ(flow_branch_count(model, g), 2);
    const auto params = model.parameters().flat();
    std::vector<double> terms;
    for (double t : {1.0, 1.0 - 2 * kPi}) {
        const Eigen::VectorXd x = t * axis;
        EXPECT_LT(linalg::max_abs(exp_map(G, G.vector(x)).matrix - g.matrix), 1e-9);
        terms.push_back(flow_branch_log_prob<double>(model, params, {x.data(), 3}, {}));
    }
    EXPECT_NEAR(flow_log_prob(model, g, {}), log_sum_exp(terms), 1e-12);
}

TEST(FlowLogProb, SupportGrowsWithRadius) {
    const auto G = GroupDescriptor::so3();
    Rng rng(92);
    std::vector<GroupElement> points;
    for (int i = 0; i < 50; ++i) points.push_back(exp_map(G, G.vector(random_algebra(G, rng, 0.05, 3.0))));
    std::vector<int> previous(points.size(), 0);
    for (double r : {0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 5.6, 6.0, 8.0, 11.0}) {
        const auto model = make_model(r, 93, 0.0);
        for (std::size_t i = 0; i < points.size(); ++i) {
            const int c = flow_branch_count(model, points[i]);
            EXPECT_GE(c, previous[i]);
            previous[i] = c;
        }
    }
}

TEST(FlowLogProb, CoarseNormalization) {
    const auto model = make_model(1.8 * kPi, 94, 0.1);
    const auto G = model.group();
    const int n = 32;
    const double dt = kPi / n, dp = kPi / n, da = 2 * kPi / n;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double theta = (i + 0.5) * dt;
        for (int j = 0; j < n; ++j) {
            const double psi = (j + 0.5) * dp;
            for (int l = 0; l < n; ++l) {
                const double phi = (l + 0.5) * da;
                Eigen::VectorXd x(3);
                x << theta * std::sin(psi) * std::cos(phi), theta * std::sin(psi) * std::sin(phi), theta * std::cos(psi);
                total += (2 - 2 * std::cos(theta)) * std::sin(psi) * std::exp(flow_log_prob(model, exp_map(G, G.vector(x)), {}));
            }
        }
    }
    EXPECT_NEAR(total * dt * dp * da, 1.0, 5e-2);
}

TEST(FlowLogProb, GradientMatchesFiniteDifferences) {
    for (double r : {0.9 * kPi, 1.8 * kPi}) {
        const auto model = make_model(r, 95, 0.3, 2, 8);
        Rng rng(96);
        const std::vector<double> cond{0.4, -0.3};
        for (int i = 0; i < 20; ++i) {
            const auto s = flow_sample(model, cond, rng);
            const ad::Objective f = [&](ad::Tape&, std::span<const ad::Var> p) {
                const auto emb = flow_embedding<ad::Var>(model, p, cond);
                const std::vector<ad::Var> x(s.algebra.begin(), s.algebra.end());
                return flow_log_prob_algebra<ad::Var>(model, p, x, emb);
            };
            EXPECT_LT(ad::check_grad(f, model.parameters().flat(), 1e-4), 1e-4) << r;
        }
    }
}

TEST(FlowFit, ZeroGradientLeavesParameters) {
    auto model = make_model(0.9 * kPi, 97, 0.3);
    const std::vector<double> before(model.parameters().flat().begin(), model.parameters().flat().end());
    FitConfig config;
    config.steps = 20;
    const auto fit = flow_fit(model, [](ad::Tape&, std::span<const ad::Var>, int) { return ad::Var(1.5); }, config);
    EXPECT_EQ(fit.loss_trace.size(), 20u);
    const std::vector<double> after(model.parameters().flat().begin(), model.parameters().flat().end());
    EXPECT_EQ(before, after);
}

TEST(FlowFit, NonFiniteLossDiverges) {
    auto model = make_model(0.9 * kPi, 98, 0.0);
    FitConfig config;
    config.steps = 5;
    const auto bad = [](ad::Tape&, std::span<const ad::Var> p, int) { return ad::log(p[0] * 0.0 - 1.0); };
    EXPECT_THROW(flow_fit(model, bad, config), Divergence);
}

TEST(FlowFit, SingleModeMatchesTargetEntropy) {
    const auto G = GroupDescriptor::so3();
    Eigen::VectorXd c(3);
    c << 0.5, -0.3, 0.8;
    const PushforwardDistribution target(G, 0.3);
    const auto target_at = target.with_location(exp_map(G, G.vector(c)));
    Rng data_rng(99);
    std::vector<std::vector<double>> train;
    for (int i = 0; i < 2000; ++i) {
        const auto s = sample(target_at, data_rng);
        const auto x = log_principal(G, s.group_element).coords;
        train.emplace_back(x.data(), x.data() + 3);
    }
    auto model = make_model(0.9 * kPi, 100, 0.0);
    FitConfig config;
    config.steps = 600;
    config.learning_rate = 1e-2;
    Rng batch_rng(101);
    const int batch = 64;
    const auto objective = [&](ad::Tape&, std::span<const ad::Var> p, int) {
        ad::Var acc(0.0);
        for (int b = 0; b < batch; ++b) {
            const auto& x = train[batch_rng.below(train.size())];
            const std::vector<ad::Var> xv(x.begin(), x.end());
            acc = acc - flow_log_prob_algebra<ad::Var>(model, p, xv, {});
        }
        return acc * (1.0 / batch);
    };
    const auto fit = flow_fit(model, objective, config);

    Rng eval_rng(102);
    const auto entropy = entropy_mc(target_at, 4000, eval_rng);
    double ll = 0.0;
    const int n = 4000;
    for (int i = 0; i < n; ++i) ll += flow_log_prob(model, sample(target_at, eval_rng).group_element, {});
    ll /= n;
    EXPECT_NEAR(ll, -entropy.mean, 0.1);

    double first = 0.0, last = 0.0;
    for (int i = 0; i < 20; ++i) {
        first += fit.loss_trace[static_cast<std::size_t>(i)];
        last += fit.loss_trace[fit.loss_trace.size() - 1 - static_cast<std::size_t>(i)];
    }
    EXPECT_LT(last, first);
}

TEST(Checkpoint, RoundTrip) {
    auto model = make_model(1.8 * kPi, 103, 0.1, 3);
    const auto G = model.group();
    Eigen::VectorXd loc(3);
    loc << -0.3, 0.2, 0.9;
    model.set_location(exp_map(G, G.vector(loc)));
    const std::string text = save_checkpoint(model);
    const auto back = load_checkpoint(text);
    EXPECT_EQ(save_checkpoint(back), text);
    Rng rng(104);
    const std::vector<double> cond{0.3, 0.1, -0.7};
    for (int i = 0; i < 20; ++i) {
        const auto g = exp_map(G, G.vector(random_algebra(G, rng, 0.1, 3.0)));
        EXPECT_EQ(flow_log_prob(model, g, cond), flow_log_prob(back, g, cond));
    }
}

TEST(Checkpoint, RejectsMalformedDocuments) {
    EXPECT_THROW(load_checkpoint("{not json"), InvalidArgument);
    EXPECT_THROW(load_checkpoint(R"({"group": "se3", "r_squash": 1.0, "layers": [], "conditioner": []})"),
                 InvalidArgument);
    auto doc = nlohmann::json::parse(save_checkpoint(make_model(0.9 * kPi, 105, 0.0)));
    doc["r_squash"] = 2 * kPi;
    EXPECT_THROW(load_checkpoint(doc.dump()), InvalidArgument);
    doc["r_squash"] = 0.9 * kPi;
    EXPECT_NO_THROW(load_checkpoint(doc.dump()));
    doc["layers"][0]["active"] = nlohmann::json::array({0, 1, 2});
    EXPECT_THROW(load_checkpoint(doc.dump()), InvalidArgument);
}
