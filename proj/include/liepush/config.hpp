#pragma once

// JSON run configurations for the experiment drivers. Every parser fills in
// defaults and returns the fully resolved document next to the typed
// settings, so a run can be reproduced from its own output header.

#include <cstdint>
#include <string>

#include <json.hpp>

#include "liepush/errors.hpp"
#include "liepush/inference.hpp"

namespace liepush {

using Json = nlohmann::ordered_json;

/// Raised for missing or ill-typed configuration fields; the message names
/// the field by its dotted path.
class ConfigError : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

/// Scene object:
///   {"kind": "line" | "cyclic", "points": [[x, y, z], ...], "noise_std": s,
///    "order": k, "axis": [x, y, z]}
/// `order` and `axis` are read for cyclic scenes only.
SymmetricScene scene_from_json(const Json& j, Json& resolved);

/// Rotation given as algebra coordinates [w1, w2, w3].
Eigen::Matrix3d rotation_from_json(const Json& j, const std::string& field);

struct ViRun {
    std::uint64_t seed = 0;
    SymmetricScene scene;
    Eigen::Matrix3d true_pose = Eigen::Matrix3d::Identity();
    ViConfig vi;
    Json resolved;
};

/// {"seed", "scene", "true_pose", "flow", "fit", "batch", "anneal_steps",
///  "eval_samples", "mh", "mmd_bandwidth", "mmd_samples"}; only "scene" is required.
ViRun vi_run_from_json(const Json& j);

struct MleRun {
    std::uint64_t seed = 0;
    SymmetricScene scene;
    int train_size = 4000;
    int heldout_size = 500;
    bool shuffle_labels = false;
    DatasetConfig data;
    MleConfig mle;
    Json resolved;
};

/// {"seed", "scene", "train_size", "heldout_size", "shuffle_labels",
///  "dataset", "flow", "fit", "batch", "mode_observations", "mode_samples",
///  "cluster_threshold", "min_cluster_fraction"}; only "scene" is required.
MleRun mle_run_from_json(const Json& j);

struct MhRun {
    std::uint64_t seed = 0;
    /// "constant", "pushforward" or "scene".
    std::string target = "constant";
    std::string group = "so3";
    double sigma = 0.4;
    int truncation = 10;
    SymmetricScene scene;
    Eigen::Matrix3d true_pose = Eigen::Matrix3d::Identity();
    MhConfig mh;
    Json resolved;
};

/// {"seed", "target", "group", "sigma", "k_trunc", "scene", "true_pose",
///  "mh": {"steps", "proposal_scale", "burn_in", "thin"}}. "scene" is
/// required for the scene target.
MhRun mh_run_from_json(const Json& j);

/// Reads a JSON file; ConfigError when it cannot be opened or parsed.
Json load_json_file(const std::string& path);

} // namespace liepush
