// Command-line driver for the liepush library.
//
//   liepush wrap-plot      --sigma S --resolution N [--k-trunc K] [--out F]
//   liepush jacobian-check --group G [--points N] [--h H] [--seed S] [--out F] [--summary F]
//   liepush sample         --group G --sigma S [--loc w..] [--n N] [--k-trunc K] [--seed S] [--out F]
//   liepush density        --group G --sigma S --at w.. [--loc w..] [--k-trunc K]
//   liepush mh|vi|mle      --config F [--steps N] [--seed S] [--out F]
//
// Exit codes: 0 success, 1 bad arguments or configuration, 2 divergence.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "liepush/config.hpp"
#include "liepush/groups.hpp"
#include "liepush/inference.hpp"
#include "liepush/liflow.hpp"
#include "liepush/pushforward.hpp"
#include "liepush/volume.hpp"

namespace {

using namespace liepush;
constexpr double kPi = std::numbers::pi;

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Writes to a file when a path is given, otherwise to stdout.
class Sink {
public:
    explicit Sink(const std::string& path) {
        if (!path.empty()) {
            file_.open(path);
            if (!file_) throw InvalidArgument("cannot open output file '" + path + "'");
        }
    }
    std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

private:
    std::ofstream file_;
};

void write_header(std::ostream& os, const std::string& command, const Json& config) {
    os << "# liepush " << command << "\n# config " << config.dump() << "\n";
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw InvalidArgument("cannot open output file '" + path + "'");
    f << text;
}

std::string base_name(const std::string& path) { return std::filesystem::path(path).filename().string(); }

std::string stem_of(const std::string& out) {
    if (out.size() > 5 && out.compare(out.size() - 5, 5, ".json") == 0) return out.substr(0, out.size() - 5);
    return out;
}

linalg::Vector parse_coords(const std::string& text, int dim, const std::string& flag) {
    linalg::Vector v = linalg::Vector::Zero(dim);
    if (text.empty()) return v;
    std::vector<double> values;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            values.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("flag '" + flag + "' expects comma-separated numbers, got '" + text + "'");
        }
    }
    if (static_cast<int>(values.size()) != dim)
        throw ConfigError("flag '" + flag + "' needs " + std::to_string(dim) + " values");
    for (int i = 0; i < dim; ++i) v[i] = values[static_cast<std::size_t>(i)];
    return v;
}

Json coords_json(const linalg::Vector& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Json rotation_coords(const Eigen::Matrix3d& r) {
    const auto G = GroupDescriptor::so3();
    try {
        return coords_json(log_principal(G, G.element(r)).coords);
    } catch (const BoundaryError&) {
        Eigen::AngleAxisd aa(r);
        return coords_json(aa.angle() * aa.axis());
    }
}

void write_rotations_csv(const std::string& path, const std::string& command, const Json& config,
                         const std::vector<Eigen::Matrix3d>& rotations) {
    std::ofstream f(path);
    if (!f) throw InvalidArgument("cannot open output file '" + path + "'");
    write_header(f, command, config);
    f << "r00,r01,r02,r10,r11,r12,r20,r21,r22\n";
    for (const auto& r : rotations) {
        for (int i = 0; i < 9; ++i) f << (i ? "," : "") << num(r(i / 3, i % 3));
        f << "\n";
    }
}

// --- wrap-plot ---

struct WrapPlotArgs {
    double sigma = 1.0;
    int resolution = 400;
    int k_trunc = 50;
    std::string out;
};

int run_wrap_plot(const WrapPlotArgs& a) {
    if (a.resolution < 2) throw ConfigError("flag '--resolution' must be >= 2");
    const auto G = GroupDescriptor::torus(1);
    const PushforwardDistribution dist(G, a.sigma, a.k_trunc);
    Json config = Json::object();
    config["group"] = "t1";
    config["sigma"] = a.sigma;
    config["resolution"] = a.resolution;
    config["k_trunc"] = a.k_trunc;
    Sink sink(a.out);
    auto& os = sink.stream();
    write_header(os, "wrap-plot", config);
    os << "theta,density\n";
    for (int i = 0; i < a.resolution; ++i) {
        const double theta = -kPi + (i + 1) * 2.0 * kPi / a.resolution;
        const auto g = exp_map(G, G.vector(linalg::Vector::Constant(1, theta)));
        os << num(theta) << "," << num(std::exp(log_density(dist, g))) << "\n";
    }
    return 0;
}

// --- jacobian-check ---

struct JacobianArgs {
    std::string group = "so3";
    int points = 1000;
    double h = 1e-5;
    std::uint64_t seed = 0;
    std::string out;
    std::string summary;
};

// Regular point: rotation angle uniform in (1e-3, pi - 1e-3).
linalg::Vector regular_point(const GroupDescriptor& G, Rng& rng) {
    linalg::Vector v(G.algebra_dim());
    if (G.kind() == GroupKind::torus) {
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = (2.0 * rng.uniform() - 1.0) * kPi;
        return v;
    }
    const double theta = 1e-3 + rng.uniform() * (kPi - 2e-3);
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    v.head<3>() = theta * axis;
    for (Eigen::Index i = 3; i < v.size(); ++i) v[i] = rng.normal();
    return v;
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2) return *mid;
    return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

int run_jacobian_check(const JacobianArgs& a) {
    if (a.points < 1) throw ConfigError("flag '--points' must be >= 1");
    const auto G = GroupDescriptor::from_string(a.group);
    Json config = Json::object();
    config["group"] = G.tag().str();
    config["points"] = a.points;
    config["h"] = a.h;
    config["seed"] = a.seed;
    Rng rng(a.seed);
    std::array<std::vector<double>, 3> errs;
    Sink sink(a.out);
    auto& os = sink.stream();
    write_header(os, "jacobian-check", config);
    os << "theta,rel_err_closed_vs_numeric,rel_err_closed_vs_series,rel_err_closed_vs_spectrum\n";
    for (int i = 0; i < a.points; ++i) {
        const auto v = G.vector(regular_point(G, rng));
        const double closed = jacobian_closed(G, v);
        const std::array<double, 3> other{jacobian_numeric(G, v, a.h), jacobian_series(G, v),
                                          jacobian_spectrum(G, v)};
        const double theta = G.kind() == GroupKind::torus ? v.coords.norm() : v.coords.head<3>().norm();
        os << num(theta);
        for (int k = 0; k < 3; ++k) {
            const double e = std::abs(closed - other[static_cast<std::size_t>(k)]) / std::abs(closed);
            errs[static_cast<std::size_t>(k)].push_back(e);
            os << "," << num(e);
        }
        os << "\n";
    }
    Json summary = Json::object();
    summary["config"] = config;
    const char* names[3] = {"numeric", "series", "spectrum"};
    summary["max"] = Json::object();
    summary["median"] = Json::object();
    for (std::size_t k = 0; k < 3; ++k) {
        summary["max"][names[k]] = *std::max_element(errs[k].begin(), errs[k].end());
        summary["median"][names[k]] = median(errs[k]);
    }
    if (!a.summary.empty()) {
        write_text(a.summary, summary.dump(2) + "\n");
    } else if (!a.out.empty()) {
        std::cout << summary.dump(2) << "\n";
    }
    return 0;
}

// --- sample and density ---

struct DistArgs {
    std::string group = "so3";
    double sigma = 0.5;
    std::string loc;
    int k_trunc = kDefaultTruncation;
};

struct Built {
    GroupDescriptor G;
    PushforwardDistribution dist;
    Json config;
};

Built build_distribution(const DistArgs& a) {
    const auto G = GroupDescriptor::from_string(a.group);
    const auto loc = parse_coords(a.loc, G.algebra_dim(), "--loc");
    PushforwardDistribution dist(G, linalg::Vector::Constant(1, a.sigma), exp_map(G, G.vector(loc)), a.k_trunc);
    Json config = Json::object();
    config["group"] = G.tag().str();
    config["sigma"] = a.sigma;
    config["loc"] = coords_json(loc);
    config["k_trunc"] = a.k_trunc;
    return {G, std::move(dist), std::move(config)};
}

int run_sample(const DistArgs& d, int n, std::uint64_t seed, const std::string& out) {
    if (n < 1) throw ConfigError("flag '--n' must be >= 1");
    auto b = build_distribution(d);
    b.config["n"] = n;
    b.config["seed"] = seed;
    Rng rng(seed);
    Sink sink(out);
    auto& os = sink.stream();
    write_header(os, "sample", b.config);
    const int dim = b.G.algebra_dim();
    const int m = b.G.matrix_size();
    for (int i = 0; i < dim; ++i) os << "eps_" << i + 1 << ",";
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < m; ++c) os << "m" << r << c << ",";
    os << "log_density\n";
    for (int s = 0; s < n; ++s) {
        const auto rec = sample(b.dist, rng);
        for (int i = 0; i < dim; ++i) os << num(rec.algebra_noise.coords[i]) << ",";
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < m; ++c) os << num(rec.group_element.matrix(r, c)) << ",";
        os << num(rec.log_density) << "\n";
    }
    return 0;
}

int run_density(const DistArgs& d, const std::string& at) {
    if (at.empty()) throw ConfigError("flag '--at' is required");
    const auto b = build_distribution(d);
    const auto v = parse_coords(at, b.G.algebra_dim(), "--at");
    std::cout << num(log_density(b.dist, exp_map(b.G, b.G.vector(v)))) << "\n";
    return 0;
}

// --- experiment drivers ---

struct RunArgs {
    std::string config;
    long steps = -1;
    std::optional<std::uint64_t> seed;
    std::string out;
};

Json load_run_config(const RunArgs& a) {
    if (a.config.empty()) throw ConfigError("flag '--config' is required");
    Json j = load_json_file(a.config);
    if (!j.is_object()) throw ConfigError("config file '" + a.config + "' must hold a JSON object");
    if (a.seed) j["seed"] = *a.seed;
    return j;
}

void emit_report(const RunArgs& a, const Json& report) {
    if (a.out.empty()) {
        std::cout << report.dump(2) << "\n";
    } else {
        write_text(a.out, report.dump(2) + "\n");
    }
}

int run_mh(const RunArgs& a) {
    Json j = a.config.empty() ? Json::object() : load_run_config(a);
    if (a.seed) j["seed"] = *a.seed;
    if (a.steps > 0) j["mh"]["steps"] = a.steps;
    const MhRun run = mh_run_from_json(j);
    const auto G = GroupDescriptor::from_string(run.group);
    Rng rng(run.seed);
    LogTarget target = [](const GroupElement&) { return 0.0; };
    std::optional<PushforwardDistribution> dist;
    linalg::Vector observation;
    if (run.target == "pushforward") {
        dist.emplace(G, run.sigma, run.truncation);
        target = [&](const GroupElement& g) {
            try {
                return log_density(*dist, g);
            } catch (const SingularElement&) {
                return -std::numeric_limits<double>::infinity();
            } catch (const SingularShell&) {
                return -std::numeric_limits<double>::infinity();
            }
        };
    } else if (run.target == "scene") {
        observation = observe(run.scene, run.true_pose);
        target = [&](const GroupElement& g) { return log_likelihood(run.scene, observation, g.matrix.topLeftCorner<3, 3>()); };
    }
    GroupElement init = G.identity();
    if (run.target == "scene") init = G.element(run.true_pose);
    if (dist) init = sample(*dist, rng).group_element;
    const auto chain = mh_chain(G, target, init, run.mh, rng);

    Json report = Json::object();
    report["command"] = "mh";
    report["config"] = run.resolved;
    report["acceptance_rate"] = chain.acceptance_rate;
    report["accepted"] = chain.accepted;
    report["total"] = chain.total;
    report["samples"] = chain.samples.size();
    if (!a.out.empty()) {
        const std::string path = stem_of(a.out) + ".samples.csv";
        std::ofstream f(path);
        if (!f) throw InvalidArgument("cannot open output file '" + path + "'");
        write_header(f, "mh", run.resolved);
        const int m = G.matrix_size();
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < m; ++c) f << (r || c ? "," : "") << "m" << r << c;
        f << "\n";
        for (const auto& s : chain.samples) {
            for (int r = 0; r < m; ++r)
                for (int c = 0; c < m; ++c) f << (r || c ? "," : "") << num(s.matrix(r, c));
            f << "\n";
        }
        report["samples_file"] = base_name(path);
    }
    emit_report(a, report);
    return 0;
}

int run_vi(const RunArgs& a) {
    Json j = load_run_config(a);
    if (a.steps > 0) j["fit"]["steps"] = a.steps;
    const ViRun run = vi_run_from_json(j);
    Rng rng(run.seed);
    const auto observation = observe(run.scene, run.true_pose);
    const auto rep = vi_fit(run.scene, observation, run.vi, rng);
    const auto shape = posterior_shape(run.scene, run.true_pose, rep);

    Json report = Json::object();
    report["command"] = "vi";
    report["config"] = run.resolved;
    report["final_elbo"] = rep.final_elbo;
    report["final_elbo_std_error"] = rep.final_elbo_std_error;
    report["q_entropy"] = rep.q_entropy;
    report["mh_acceptance"] = rep.mh_acceptance;
    report["mmd_q_mh"] = rep.mmd_q_mh;
    report["mmd_mh_mh"] = rep.mmd_mh_mh;
    Json s = Json::object();
    if (run.scene.symmetry == SymmetryKind::line) {
        s["q_residual_p90"] = shape.q_residual_p90;
        s["mh_residual_p90"] = shape.mh_residual_p90;
    } else {
        s["q_clusters"] = shape.q_clusters;
        s["q_cluster_fractions"] = shape.q_cluster_fractions;
        s["q_cluster_distances"] = shape.q_cluster_distances;
        s["q_max_pose_error"] = shape.q_max_pose_error;
    }
    report["posterior"] = s;
    report["elbo_trace"] = rep.elbo_trace;
    if (!a.out.empty()) {
        const std::string stem = stem_of(a.out);
        write_text(stem + ".checkpoint.json", rep.checkpoint);
        write_rotations_csv(stem + ".q_samples.csv", "vi", run.resolved, rep.q_samples);
        write_rotations_csv(stem + ".mh_samples.csv", "vi", run.resolved, rep.mh_samples);
        report["checkpoint_file"] = base_name(stem + ".checkpoint.json");
    }
    emit_report(a, report);
    return 0;
}

int run_mle(const RunArgs& a) {
    Json j = load_run_config(a);
    if (a.steps > 0) j["fit"]["steps"] = a.steps;
    const MleRun run = mle_run_from_json(j);
    Rng rng(run.seed);
    const auto all = generate_dataset(run.scene, run.train_size + run.heldout_size, rng, run.data);
    PoseDataset train, heldout;
    train.records.assign(all.records.begin(), all.records.begin() + run.train_size);
    heldout.records.assign(all.records.begin() + run.train_size, all.records.end());
    if (run.shuffle_labels) train = shuffle_labels(train, rng);
    const auto rep = mle_fit(run.scene, train, heldout, run.mle, rng);

    Json report = Json::object();
    report["command"] = "mle";
    report["config"] = run.resolved;
    report["heldout_log_likelihood"] = rep.heldout_log_likelihood;
    Json modes = Json::object();
    int min_count = 0;
    int max_count = 0;
    double worst_error = 0.0;
    Json per = Json::array();
    for (std::size_t i = 0; i < rep.modes.size(); ++i) {
        const auto& m = rep.modes[i];
        min_count = i == 0 ? m.count : std::min(min_count, m.count);
        max_count = std::max(max_count, m.count);
        worst_error = std::max(worst_error, m.max_pose_error);
        Json o = Json::object();
        o["count"] = m.count;
        o["true_pose"] = rotation_coords(m.true_pose);
        o["centers"] = Json::array();
        for (const auto& c : m.centers) o["centers"].push_back(rotation_coords(c));
        o["fractions"] = m.fractions;
        o["mutual_distances"] = m.mutual_distances;
        o["max_pose_error"] = m.max_pose_error;
        o["covered_fraction"] = m.covered_fraction;
        per.push_back(o);
    }
    modes["count"] = min_count;
    modes["max_count"] = max_count;
    modes["max_pose_error"] = worst_error;
    modes["observations"] = per;
    report["modes"] = modes;
    report["loss_trace"] = rep.loss_trace;
    if (!a.out.empty()) {
        const std::string stem = stem_of(a.out);
        write_text(stem + ".checkpoint.json", rep.checkpoint);
        report["checkpoint_file"] = base_name(stem + ".checkpoint.json");
    }
    emit_report(a, report);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pushforward densities and flows on Lie groups"};
    app.require_subcommand(1);

    WrapPlotArgs wrap;
    auto* wrap_cmd = app.add_subcommand("wrap-plot", "Wrapped normal density on the circle");
    wrap_cmd->add_option("--sigma", wrap.sigma)->required();
    wrap_cmd->add_option("--resolution", wrap.resolution);
    wrap_cmd->add_option("--k-trunc", wrap.k_trunc);
    wrap_cmd->add_option("--out", wrap.out);

    JacobianArgs jac;
    auto* jac_cmd = app.add_subcommand("jacobian-check", "Compare the four volume-factor routes");
    jac_cmd->set_help_flag("--help", "Print this help message and exit");
    jac_cmd->add_option("--group", jac.group)->required();
    jac_cmd->add_option("--points", jac.points);
    jac_cmd->add_option("--h", jac.h);
    jac_cmd->add_option("--seed", jac.seed);
    jac_cmd->add_option("--out", jac.out);
    jac_cmd->add_option("--summary", jac.summary);

    DistArgs samp;
    int samp_n = 1000;
    std::uint64_t samp_seed = 0;
    std::string samp_out;
    auto* samp_cmd = app.add_subcommand("sample", "Draw from a pushforward distribution");
    samp_cmd->add_option("--group", samp.group)->required();
    samp_cmd->add_option("--sigma", samp.sigma)->required();
    samp_cmd->add_option("--loc", samp.loc);
    samp_cmd->add_option("--k-trunc", samp.k_trunc);
    samp_cmd->add_option("--n", samp_n);
    samp_cmd->add_option("--seed", samp_seed);
    samp_cmd->add_option("--out", samp_out);

    DistArgs dens;
    std::string dens_at;
    auto* dens_cmd = app.add_subcommand("density", "Log density of a pushforward distribution");
    dens_cmd->add_option("--group", dens.group)->required();
    dens_cmd->add_option("--sigma", dens.sigma)->required();
    dens_cmd->add_option("--loc", dens.loc);
    dens_cmd->add_option("--at", dens_at)->required();
    dens_cmd->add_option("--k-trunc", dens.k_trunc);

    std::array<RunArgs, 3> runs;
    std::array<CLI::App*, 3> run_cmds{};
    const std::array<std::string, 3> run_names{"mh", "vi", "mle"};
    const std::array<std::string, 3> run_help{"Metropolis-Hastings reference chain",
                                              "Variational posterior over a rotation", "Conditional maximum likelihood"};
    std::array<std::uint64_t, 3> run_seeds{};
    for (std::size_t i = 0; i < 3; ++i) {
        run_cmds[i] = app.add_subcommand(run_names[i], run_help[i]);
        auto* c = run_cmds[i]->add_option("--config", runs[i].config);
        if (i > 0) c->required();
        run_cmds[i]->add_option("--steps", runs[i].steps);
        run_cmds[i]->add_option("--seed", run_seeds[i]);
        run_cmds[i]->add_option("--out", runs[i].out);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*wrap_cmd) return run_wrap_plot(wrap);
        if (*jac_cmd) return run_jacobian_check(jac);
        if (*samp_cmd) return run_sample(samp, samp_n, samp_seed, samp_out);
        if (*dens_cmd) return run_density(dens, dens_at);
        for (std::size_t i = 0; i < 3; ++i) {
            if (!*run_cmds[i]) continue;
            if (run_cmds[i]->count("--seed")) runs[i].seed = run_seeds[i];
            if (i == 0) return run_mh(runs[i]);
            if (i == 1) return run_vi(runs[i]);
            return run_mle(runs[i]);
        }
    } catch (const Divergence& e) {
        std::cerr << "liepush: diverged: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "liepush: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
