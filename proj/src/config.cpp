#include "liepush/config.hpp"

#include <fstream>
#include <sstream>

#include "liepush/groups.hpp"

namespace liepush {

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

const Json& require(const Json& j, const std::string& key, const std::string& path) {
    if (!j.is_object()) throw ConfigError("field '" + path + "' must be an object");
    const auto it = j.find(key);
    if (it == j.end()) throw ConfigError("missing field '" + join(path, key) + "'");
    return *it;
}

template <class T>
T as(const Json& v, const std::string& field) {
    try {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("field '" + field + "' must be a boolean");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError("field '" + field + "' must be an integer");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError("field '" + field + "' must be a number");
        } else {
            if (!v.is_string()) throw ConfigError("field '" + field + "' must be a string");
        }
        return v.get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("field '" + field + "': " + e.what());
    }
}

// Optional field with a default; the value used is written to `out`.
template <class T>
T read(const Json& j, const std::string& key, T fallback, Json& out, const std::string& path) {
    T value = fallback;
    if (j.is_object() && j.contains(key)) value = as<T>(j.at(key), join(path, key));
    out[key] = value;
    return value;
}

const Json& section(const Json& j, const std::string& key) {
    static const Json empty = Json::object();
    if (j.is_object() && j.contains(key)) {
        const Json& s = j.at(key);
        if (!s.is_object()) throw ConfigError("field '" + key + "' must be an object");
        return s;
    }
    return empty;
}

Eigen::Vector3d vector3(const Json& v, const std::string& field) {
    if (!v.is_array() || v.size() != 3) throw ConfigError("field '" + field + "' must be an array of 3 numbers");
    Eigen::Vector3d out;
    for (int i = 0; i < 3; ++i) out[i] = as<double>(v.at(static_cast<std::size_t>(i)), field);
    return out;
}

Json vector_json(const Eigen::Vector3d& v) { return Json::array({v[0], v[1], v[2]}); }

FlowConfig flow_from_json(const Json& j, FlowConfig f, Json& out) {
    f.layers = read(j, "layers", f.layers, out, "flow");
    f.hidden_width = read(j, "hidden_width", f.hidden_width, out, "flow");
    f.hidden_layers = read(j, "hidden_layers", f.hidden_layers, out, "flow");
    f.r_squash = read(j, "r_squash", f.r_squash, out, "flow");
    f.embedding_width = read(j, "embedding_width", f.embedding_width, out, "flow");
    f.init_gain = read(j, "init_gain", f.init_gain, out, "flow");
    return f;
}

FitConfig fit_from_json(const Json& j, FitConfig f, Json& out) {
    f.steps = read(j, "steps", f.steps, out, "fit");
    f.learning_rate = read(j, "learning_rate", f.learning_rate, out, "fit");
    f.clip_norm = read(j, "clip_norm", f.clip_norm, out, "fit");
    f.beta1 = read(j, "beta1", f.beta1, out, "fit");
    f.beta2 = read(j, "beta2", f.beta2, out, "fit");
    f.final_lr_fraction = read(j, "final_lr_fraction", f.final_lr_fraction, out, "fit");
    return f;
}

MhConfig mh_from_json(const Json& j, MhConfig m, Json& out) {
    m.steps = read<long>(j, "steps", m.steps, out, "mh");
    m.proposal_scale = read(j, "proposal_scale", m.proposal_scale, out, "mh");
    m.burn_in = read(j, "burn_in", m.burn_in, out, "mh");
    m.thin = read(j, "thin", m.thin, out, "mh");
    return m;
}

std::uint64_t seed_from_json(const Json& j, Json& out) {
    return read<std::uint64_t>(j, "seed", 0, out, "");
}

} // namespace

Eigen::Matrix3d rotation_from_json(const Json& j, const std::string& field) {
    const auto G = GroupDescriptor::so3();
    return exp_map(G, G.vector(vector3(j, field))).matrix;
}

SymmetricScene scene_from_json(const Json& j, Json& resolved) {
    if (!j.is_object()) throw ConfigError("field 'scene' must be an object");
    const auto kind = as<std::string>(require(j, "kind", "scene"), "scene.kind");
    const Json& pts = require(j, "points", "scene");
    if (!pts.is_array() || pts.empty()) throw ConfigError("field 'scene.points' must be a non-empty array");
    std::vector<Eigen::Vector3d> points;
    for (std::size_t i = 0; i < pts.size(); ++i) points.push_back(vector3(pts[i], "scene.points"));
    const double noise = as<double>(require(j, "noise_std", "scene"), "scene.noise_std");
    resolved = Json::object();
    resolved["kind"] = kind;
    resolved["points"] = Json::array();
    for (const auto& p : points) resolved["points"].push_back(vector_json(p));
    resolved["noise_std"] = noise;
    if (kind == "line") return line_scene(points, noise);
    if (kind == "cyclic") {
        const int order = as<int>(require(j, "order", "scene"), "scene.order");
        const Eigen::Vector3d axis = j.contains("axis") ? vector3(j.at("axis"), "scene.axis") : Eigen::Vector3d::UnitZ();
        resolved["order"] = order;
        resolved["axis"] = vector_json(axis);
        return symmetrize(points, order, axis, noise);
    }
    throw ConfigError("field 'scene.kind' must be \"line\" or \"cyclic\"");
}

ViRun vi_run_from_json(const Json& j) {
    if (!j.is_object()) throw ConfigError("vi config must be a JSON object");
    ViRun run;
    Json& out = run.resolved;
    out = Json::object();
    run.seed = seed_from_json(j, out);
    Json scene_out;
    run.scene = scene_from_json(require(j, "scene", ""), scene_out);
    out["scene"] = scene_out;
    Eigen::Vector3d pose = Eigen::Vector3d::Zero();
    if (j.contains("true_pose")) pose = vector3(j.at("true_pose"), "true_pose");
    out["true_pose"] = vector_json(pose);
    run.true_pose = rotation_from_json(out["true_pose"], "true_pose");

    ViConfig& vi = run.vi;
    out["flow"] = Json::object();
    vi.flow = flow_from_json(section(j, "flow"), vi.flow, out["flow"]);
    out["fit"] = Json::object();
    vi.fit = fit_from_json(section(j, "fit"), vi.fit, out["fit"]);
    vi.batch = read(j, "batch", vi.batch, out, "");
    vi.anneal_steps = read(j, "anneal_steps", vi.anneal_steps, out, "");
    vi.eval_samples = read(j, "eval_samples", vi.eval_samples, out, "");
    out["mh"] = Json::object();
    vi.mh = mh_from_json(section(j, "mh"), vi.mh, out["mh"]);
    vi.mmd_bandwidth = read(j, "mmd_bandwidth", vi.mmd_bandwidth, out, "");
    vi.mmd_samples = read(j, "mmd_samples", vi.mmd_samples, out, "");
    return run;
}

MleRun mle_run_from_json(const Json& j) {
    if (!j.is_object()) throw ConfigError("mle config must be a JSON object");
    MleRun run;
    Json& out = run.resolved;
    out = Json::object();
    run.seed = seed_from_json(j, out);
    Json scene_out;
    run.scene = scene_from_json(require(j, "scene", ""), scene_out);
    out["scene"] = scene_out;
    run.train_size = read(j, "train_size", run.train_size, out, "");
    run.heldout_size = read(j, "heldout_size", run.heldout_size, out, "");
    run.shuffle_labels = read(j, "shuffle_labels", run.shuffle_labels, out, "");
    const Json& d = section(j, "dataset");
    out["dataset"] = Json::object();
    run.data.pose_noise_std = read(d, "pose_noise_std", run.data.pose_noise_std, out["dataset"], "dataset");
    run.data.uniform_poses = read(d, "uniform_poses", run.data.uniform_poses, out["dataset"], "dataset");
    run.data.distinct_observations =
        read(d, "distinct_observations", run.data.distinct_observations, out["dataset"], "dataset");

    MleConfig& m = run.mle;
    out["flow"] = Json::object();
    m.flow = flow_from_json(section(j, "flow"), m.flow, out["flow"]);
    out["fit"] = Json::object();
    m.fit = fit_from_json(section(j, "fit"), m.fit, out["fit"]);
    m.batch = read(j, "batch", m.batch, out, "");
    m.mode_observations = read(j, "mode_observations", m.mode_observations, out, "");
    m.mode_samples = read(j, "mode_samples", m.mode_samples, out, "");
    m.cluster_threshold = read(j, "cluster_threshold", m.cluster_threshold, out, "");
    m.min_cluster_fraction = read(j, "min_cluster_fraction", m.min_cluster_fraction, out, "");
    if (run.train_size < 1) throw ConfigError("field 'train_size' must be >= 1");
    if (run.heldout_size < 0) throw ConfigError("field 'heldout_size' must be >= 0");
    return run;
}

MhRun mh_run_from_json(const Json& j) {
    if (!j.is_object()) throw ConfigError("mh config must be a JSON object");
    MhRun run;
    Json& out = run.resolved;
    out = Json::object();
    run.seed = seed_from_json(j, out);
    run.target = read(j, "target", run.target, out, "");
    run.group = read(j, "group", run.group, out, "");
    run.sigma = read(j, "sigma", run.sigma, out, "");
    run.truncation = read(j, "k_trunc", run.truncation, out, "");
    if (run.target == "scene") {
        Json scene_out;
        run.scene = scene_from_json(require(j, "scene", ""), scene_out);
        out["scene"] = scene_out;
        Eigen::Vector3d pose = Eigen::Vector3d::Zero();
        if (j.contains("true_pose")) pose = vector3(j.at("true_pose"), "true_pose");
        out["true_pose"] = vector_json(pose);
        run.true_pose = rotation_from_json(out["true_pose"], "true_pose");
        if (run.group != "so3") throw ConfigError("field 'group' must be \"so3\" for the scene target");
    } else if (run.target != "constant" && run.target != "pushforward") {
        throw ConfigError("field 'target' must be \"constant\", \"pushforward\" or \"scene\"");
    }
    out["mh"] = Json::object();
    run.mh = mh_from_json(section(j, "mh"), run.mh, out["mh"]);
    return run;
}

Json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return Json::parse(buf.str());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
}

} // namespace liepush
