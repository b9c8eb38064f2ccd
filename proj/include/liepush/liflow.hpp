#pragma once

// Locally invertible flow on SO(3):
//
//   z ~ N(0, I) -> affine coupling layers -> radial squash r tanh(|v|) -> exp -> g_loc exp(x)
//
// For r < pi the chain is injective. For larger r the exp step is
// non-injective; the likelihood sums over every preimage branch inside the
// squash ball, traversing the flow backwards once per branch.

#include <functional>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "liepush/autodiff.hpp"
#include "liepush/groups.hpp"
#include "liepush/rng.hpp"

namespace liepush {

/// Bound on the scale pre-activation: s = kScaleClamp * tanh(raw / kScaleClamp).
inline constexpr double kScaleClamp = 5.0;

struct DenseLayer {
    int in = 0;
    int out = 0;
    std::size_t weight_offset = 0; // row-major out x in
    std::size_t bias_offset = 0;
};

/// Feed-forward network: tanh on hidden layers, linear output unless
/// `tanh_output` is set.
struct Mlp {
    std::vector<DenseLayer> layers;
    bool tanh_output = false;

    int in() const { return layers.empty() ? 0 : layers.front().in; }
    int out() const { return layers.empty() ? 0 : layers.back().out; }
};

struct CouplingLayer {
    std::vector<int> active;
    std::vector<int> passive;
    Mlp scale_net;
    Mlp shift_net;
};

struct RadialSquash {
    double radius = 0.9 * std::numbers::pi;
};

struct FlowConfig {
    int layers = 4;
    int hidden_width = 32;
    int hidden_layers = 1;
    double r_squash = 0.9 * std::numbers::pi;
    int conditioner_dim = 0;
    int embedding_width = 32;
    /// Std of the Gaussian initialization of non-final weights, relative to
    /// 1/sqrt(fan_in). Final layers of every coupling net start at zero.
    double init_gain = 1.0;
};

template <class T>
struct SquashResult {
    std::vector<T> value;
    T logdet;
};

class FlowModel {
public:
    FlowModel(GroupDescriptor group, const FlowConfig& config, Rng& init_rng);

    const GroupDescriptor& group() const { return group_; }
    int dim() const { return group_.algebra_dim(); }
    const std::vector<CouplingLayer>& layers() const { return layers_; }
    const RadialSquash& squash() const { return squash_; }
    int conditioner_dim() const { return conditioner_dim_; }
    const Mlp& conditioner() const { return conditioner_; }
    const GroupElement& location() const { return location_; }
    void set_location(GroupElement g);

    const ad::ParameterSet& parameters() const { return params_; }
    ad::ParameterSet& parameters() { return params_; }

    /// Overwrites every parameter with N(0, scale^2) draws.
    void randomize(Rng& rng, double scale);

    /// Number of branches examined by flow_log_prob: ceil(r / 2 pi) + 1.
    int branch_truncation() const;

private:
    friend FlowModel load_checkpoint(std::string_view json);
    FlowModel() = default;

    Mlp add_mlp(const std::string& name, const std::vector<int>& widths, bool zero_final, double gain, Rng& rng,
                bool tanh_output);

    GroupDescriptor group_ = GroupDescriptor::so3();
    std::vector<CouplingLayer> layers_;
    RadialSquash squash_;
    int conditioner_dim_ = 0;
    Mlp conditioner_;
    GroupElement location_;
    ad::ParameterSet params_;
};

template <class T>
std::vector<T> mlp_forward(const Mlp& net, std::span<const T> params, std::span<const T> input);

/// w = r tanh(rho) v / rho with rho = |v|; logdet of the radial map.
template <class T>
SquashResult<T> squash(const RadialSquash& s, std::span<const T> v);

/// Inverse of squash. Throws OutOfSupport when |w| >= r - 1e-9.
template <class T>
SquashResult<T> unsquash(const RadialSquash& s, std::span<const T> w);

/// Affine coupling: active <- active * exp(s) + t; logdet = sum s.
template <class T>
SquashResult<T> coupling_forward(const CouplingLayer& layer, std::span<const T> params, std::span<const T> v,
                                 std::span<const T> embedding);

/// Inverse coupling; logdet of the inverse map (= -sum s).
template <class T>
SquashResult<T> coupling_inverse(const CouplingLayer& layer, std::span<const T> params, std::span<const T> v,
                                 std::span<const T> embedding);

/// Conditioner embedding of an observation (empty when unconditional).
template <class T>
std::vector<T> flow_embedding(const FlowModel& model, std::span<const T> params, std::span<const double> cond);

/// Coupling layers then squash: returns the algebra point and the summed
/// forward logdet.
template <class T>
SquashResult<T> flow_forward(const FlowModel& model, std::span<const T> params, std::span<const T> z,
                             std::span<const T> embedding);

/// Log density contribution of one in-support algebra point x: base logpdf
/// of the recovered z, plus inverse logdets, plus log J(x).
template <class T>
T flow_branch_log_prob(const FlowModel& model, std::span<const T> params, std::span<const T> x,
                       std::span<const T> embedding);

/// Group log density at exp(x) (location excluded), summing the branches
/// (|x| + 2 pi k) x/|x| that fall inside the squash ball.
template <class T>
T flow_log_prob_algebra(const FlowModel& model, std::span<const T> params, std::span<const T> x,
                        std::span<const T> embedding);

template <class T>
struct FlowDraw {
    std::vector<T> algebra;
    T log_prob;
};

/// Reparameterized draw at fixed base noise z: the algebra point and its
/// branch-summed log density. The sampling branch reuses the forward logdet;
/// the remaining in-support branches are traversed backwards.
template <class T>
FlowDraw<T> flow_rsample(const FlowModel& model, std::span<const T> params, std::span<const double> z,
                         std::span<const T> embedding);

/// Inverse traversal: recovers z from an in-support algebra point.
std::vector<double> flow_inverse(const FlowModel& model, std::span<const double> x, std::span<const double> cond);

struct FlowSample {
    GroupElement element;
    std::vector<double> algebra; // point in the squash ball
    std::vector<double> base;    // z
    double log_prob = 0.0;
};

/// Draws z ~ N(0, I) and pushes it through the chain. The returned log_prob
/// sums all in-support branches, so it equals flow_log_prob(element).
FlowSample flow_sample(const FlowModel& model, std::span<const double> cond, Rng& rng);

/// Log density at g: enumerates preimage(loc^-1 g, K) with
/// K = ceil(r / 2 pi) + 1, keeps branches inside the squash ball and combines
/// them by log-sum-exp. -inf when no branch is in support.
double flow_log_prob(const FlowModel& model, const GroupElement& g, std::span<const double> cond);

/// Number of preimage branches of loc^-1 g inside the squash ball.
int flow_branch_count(const FlowModel& model, const GroupElement& g);

struct FitConfig {
    int steps = 1000;
    double learning_rate = 1e-3;
    double clip_norm = 10.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    /// Cosine decay of the step size from learning_rate down to
    /// learning_rate * final_lr_fraction; 1 keeps it constant.
    double final_lr_fraction = 1.0;
};

struct FitResult {
    std::vector<double> loss_trace;
};

/// Minibatch loss at `step`, recorded on `tape` against the flat parameters.
using FlowObjective = std::function<ad::Var(ad::Tape& tape, std::span<const ad::Var> params, int step)>;

/// Adam descent on the objective. Throws Divergence on a non-finite loss.
FitResult flow_fit(FlowModel& model, const FlowObjective& objective, const FitConfig& config);

std::string save_checkpoint(const FlowModel& model);
FlowModel load_checkpoint(std::string_view json);

} // namespace liepush
