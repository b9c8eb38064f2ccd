#include "liepush/liflow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <type_traits>

#include <json.hpp>

#include "liepush/errors.hpp"
#include "liepush/pushforward.hpp"
#include "liepush/volume.hpp"

namespace liepush {

namespace {

using ad::Var;
using ad::value;
using Json = nlohmann::json;

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kLog2 = 0.69314718055994530942;
constexpr double kHalfLog2Pi = 0.91893853320467274178;
constexpr double kSupportMargin = 1e-9;
constexpr double kShellClearance = 1e-3;
constexpr int kMaxResample = 100;

template <class T>
T dense_unit(const DenseLayer& layer, std::span<const T> params, std::span<const T> x, int row) {
    const std::size_t w = layer.weight_offset + static_cast<std::size_t>(row) * static_cast<std::size_t>(layer.in);
    const T& bias = params[layer.bias_offset + static_cast<std::size_t>(row)];
    if constexpr (std::is_same_v<T, Var>) {
        return ad::dot(params.subspan(w, static_cast<std::size_t>(layer.in)), x, bias);
    } else {
        T acc = bias;
        for (int i = 0; i < layer.in; ++i) acc += params[w + static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
        return acc;
    }
}

template <class T>
T squared_norm(std::span<const T> v) {
    T acc(0.0);
    for (const T& x : v) acc = acc + x * x;
    return acc;
}

// log of the radial-map determinant r sech^2(rho) (r tanh(rho)/rho)^(d-1),
// given rho^2 (and rho when it is not small).
template <class T>
T squash_logdet(const T& rho2, double r, int d) {
    using std::exp;
    using std::log;
    using std::log1p;
    using std::sqrt;
    using std::tanh;
    if (value(rho2) < kernels::kSmallAngle * kernels::kSmallAngle) {
        // log sech^2 = -rho^2 + rho^4/6, log(tanh(rho)/rho) = -rho^2/3 + 7 rho^4/90.
        return rho2 * (-1.0 - (d - 1) / 3.0) + rho2 * rho2 * (1.0 / 6.0 + 7.0 * (d - 1) / 90.0) + d * std::log(r);
    }
    const T rho = sqrt(rho2);
    const T log_sech2 = (kLog2 - rho - log1p(exp(rho * -2.0))) * 2.0;
    return log_sech2 + std::log(r) + log(tanh(rho) / rho * r) * static_cast<double>(d - 1);
}

template <class T>
T standard_normal_log_density(std::span<const T> z) {
    return squared_norm(z) * -0.5 - kHalfLog2Pi * static_cast<double>(z.size());
}

template <class T>
T log_sum_exp_t(const std::vector<T>& terms) {
    using std::exp;
    using std::log;
    double m = -std::numeric_limits<double>::infinity();
    for (const T& t : terms) m = std::max(m, value(t));
    if (!std::isfinite(m)) return T(m);
    T s(0.0);
    for (const T& t : terms) s = s + exp(t - m);
    return log(s) + m;
}

template <class T>
std::vector<T> coupling_input(const CouplingLayer& layer, std::span<const T> v, std::span<const T> embedding) {
    std::vector<T> in;
    in.reserve(layer.passive.size() + embedding.size());
    for (int p : layer.passive) in.push_back(v[static_cast<std::size_t>(p)]);
    in.insert(in.end(), embedding.begin(), embedding.end());
    return in;
}

template <class T>
std::vector<T> clamped_scale(const CouplingLayer& layer, std::span<const T> params, std::span<const T> in) {
    using std::tanh;
    auto s = mlp_forward<T>(layer.scale_net, params, in);
    for (auto& x : s) x = tanh(x / kScaleClamp) * kScaleClamp;
    return s;
}

bool shell_clear(double r) {
    for (int m = 1; m * kTwoPi < r + 1.0; ++m) {
        if (std::abs(r - m * kTwoPi) < kShellClearance) return false;
    }
    return true;
}

std::string layer_prefix(int l, const char* net) { return "layer" + std::to_string(l) + "." + net; }

Json mlp_to_json(const Mlp& net, std::span<const double> params) {
    Json layers = Json::array();
    for (const auto& dl : net.layers) {
        const auto nw = static_cast<std::size_t>(dl.in * dl.out);
        const auto w = params.subspan(dl.weight_offset, nw);
        const auto b = params.subspan(dl.bias_offset, static_cast<std::size_t>(dl.out));
        layers.push_back({{"in", dl.in},
                          {"out", dl.out},
                          {"weight", std::vector<double>(w.begin(), w.end())},
                          {"bias", std::vector<double>(b.begin(), b.end())}});
    }
    return layers;
}

Mlp mlp_from_json(const Json& j, const std::string& name, ad::ParameterSet& params, bool tanh_output) {
    Mlp net;
    net.tanh_output = tanh_output;
    int i = 0;
    for (const auto& jl : j) {
        DenseLayer dl;
        dl.in = jl.at("in").get<int>();
        dl.out = jl.at("out").get<int>();
        const auto w = jl.at("weight").get<std::vector<double>>();
        const auto b = jl.at("bias").get<std::vector<double>>();
        if (w.size() != static_cast<std::size_t>(dl.in * dl.out) || b.size() != static_cast<std::size_t>(dl.out)) {
            throw InvalidArgument("checkpoint: layer " + name + " has inconsistent array sizes");
        }
        if (!net.layers.empty() && net.layers.back().out != dl.in) {
            throw InvalidArgument("checkpoint: layer " + name + " widths do not chain");
        }
        dl.weight_offset = params.add(name + "." + std::to_string(i) + ".weight", w);
        dl.bias_offset = params.add(name + "." + std::to_string(i) + ".bias", b);
        net.layers.push_back(dl);
        ++i;
    }
    return net;
}

} // namespace

// --- FlowModel ---

FlowModel::FlowModel(GroupDescriptor group, const FlowConfig& config, Rng& init_rng)
    : group_(std::move(group)), conditioner_dim_(config.conditioner_dim) {
    if (group_.kind() != GroupKind::so3) throw InvalidArgument("FlowModel: flows are implemented for so3 only");
    if (!(config.r_squash > 0.0) || !std::isfinite(config.r_squash)) {
        throw InvalidArgument("FlowModel: r_squash must be positive");
    }
    if (!shell_clear(config.r_squash)) {
        throw InvalidArgument("FlowModel: r_squash must stay at least 1e-3 away from every 2 pi m");
    }
    if (config.layers < 1 || config.hidden_width < 1 || config.hidden_layers < 0) {
        throw InvalidArgument("FlowModel: layers and widths must be positive");
    }
    if (config.conditioner_dim < 0) throw InvalidArgument("FlowModel: conditioner_dim must be >= 0");
    squash_.radius = config.r_squash;
    location_ = group_.identity();

    int embed = 0;
    if (conditioner_dim_ > 0) {
        if (config.embedding_width < 1) throw InvalidArgument("FlowModel: embedding_width must be positive");
        embed = config.embedding_width;
        conditioner_ = add_mlp("conditioner", {conditioner_dim_, embed, embed}, false, config.init_gain, init_rng, true);
    }

    const int d = dim();
    const int half = d / 2;
    for (int l = 0; l < config.layers; ++l) {
        std::vector<int> order(static_cast<std::size_t>(d));
        std::iota(order.begin(), order.end(), 0);
        std::rotate(order.begin(), order.begin() + (l / 2) % d, order.end());
        std::vector<int> first(order.begin(), order.begin() + half);
        std::vector<int> second(order.begin() + half, order.end());
        CouplingLayer layer;
        layer.active = (l % 2 == 0) ? first : second;
        layer.passive = (l % 2 == 0) ? second : first;

        std::vector<int> widths{static_cast<int>(layer.passive.size()) + embed};
        for (int h = 0; h < config.hidden_layers; ++h) widths.push_back(config.hidden_width);
        widths.push_back(static_cast<int>(layer.active.size()));
        layer.scale_net = add_mlp(layer_prefix(l, "scale"), widths, true, config.init_gain, init_rng, false);
        layer.shift_net = add_mlp(layer_prefix(l, "shift"), widths, true, config.init_gain, init_rng, false);
        layers_.push_back(std::move(layer));
    }
}

Mlp FlowModel::add_mlp(const std::string& name, const std::vector<int>& widths, bool zero_final, double gain,
                       Rng& rng, bool tanh_output) {
    Mlp net;
    net.tanh_output = tanh_output;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        DenseLayer dl;
        dl.in = widths[i];
        dl.out = widths[i + 1];
        const bool last = i + 2 == widths.size();
        std::vector<double> w(static_cast<std::size_t>(dl.in * dl.out), 0.0);
        if (!(last && zero_final)) {
            const double std_dev = gain / std::sqrt(static_cast<double>(std::max(dl.in, 1)));
            for (auto& x : w) x = std_dev * rng.normal();
        }
        dl.weight_offset = params_.add(name + "." + std::to_string(i) + ".weight", w);
        dl.bias_offset = params_.add(name + "." + std::to_string(i) + ".bias", static_cast<std::size_t>(dl.out));
        net.layers.push_back(dl);
    }
    return net;
}

void FlowModel::set_location(GroupElement g) {
    validate_element(group_, g);
    location_ = std::move(g);
}

void FlowModel::randomize(Rng& rng, double scale) {
    for (auto& x : params_.flat()) x = scale * rng.normal();
}

int FlowModel::branch_truncation() const { return static_cast<int>(std::ceil(squash_.radius / kTwoPi)) + 1; }

// --- templated pieces ---

template <class T>
std::vector<T> mlp_forward(const Mlp& net, std::span<const T> params, std::span<const T> input) {
    using std::tanh;
    if (static_cast<int>(input.size()) != net.in()) throw InvalidArgument("mlp_forward: input width mismatch");
    std::vector<T> x(input.begin(), input.end());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto& dl = net.layers[l];
        std::vector<T> y(static_cast<std::size_t>(dl.out));
        const bool activate = l + 1 < net.layers.size() || net.tanh_output;
        for (int j = 0; j < dl.out; ++j) {
            T u = dense_unit<T>(dl, params, x, j);
            y[static_cast<std::size_t>(j)] = activate ? tanh(u) : u;
        }
        x = std::move(y);
    }
    return x;
}

template <class T>
SquashResult<T> squash(const RadialSquash& s, std::span<const T> v) {
    using std::sqrt;
    using std::tanh;
    const double r = s.radius;
    const int d = static_cast<int>(v.size());
    const T rho2 = squared_norm(v);
    T factor;
    if (value(rho2) < kernels::kSmallAngle * kernels::kSmallAngle) {
        factor = (1.0 - rho2 / 3.0 + rho2 * rho2 * (2.0 / 15.0)) * r;
    } else {
        const T rho = sqrt(rho2);
        factor = tanh(rho) / rho * r;
    }
    SquashResult<T> out;
    out.value.reserve(v.size());
    for (const T& x : v) out.value.push_back(x * factor);
    out.logdet = squash_logdet(rho2, r, d);
    return out;
}

template <class T>
SquashResult<T> unsquash(const RadialSquash& s, std::span<const T> w) {
    using std::atanh;
    using std::sqrt;
    const double r = s.radius;
    const int d = static_cast<int>(w.size());
    const T n2 = squared_norm(w);
    if (!(std::sqrt(value(n2)) < r - kSupportMargin)) {
        throw OutOfSupport("unsquash: point lies outside the squash ball");
    }
    T factor;
    if (value(n2) < kernels::kSmallAngle * kernels::kSmallAngle * r * r) {
        const T s2 = n2 / (r * r);
        factor = (1.0 + s2 / 3.0 + s2 * s2 / 5.0) / r;
    } else {
        const T n = sqrt(n2);
        factor = atanh(n / r) / n;
    }
    SquashResult<T> out;
    out.value.reserve(w.size());
    for (const T& x : w) out.value.push_back(x * factor);
    out.logdet = -squash_logdet(squared_norm<T>(out.value), r, d);
    return out;
}

template <class T>
SquashResult<T> coupling_forward(const CouplingLayer& layer, std::span<const T> params, std::span<const T> v,
                                 std::span<const T> embedding) {
    using std::exp;
    const auto in = coupling_input(layer, v, embedding);
    const auto s = clamped_scale<T>(layer, params, in);
    const auto t = mlp_forward<T>(layer.shift_net, params, in);
    SquashResult<T> out{std::vector<T>(v.begin(), v.end()), T(0.0)};
    for (std::size_t i = 0; i < layer.active.size(); ++i) {
        const auto a = static_cast<std::size_t>(layer.active[i]);
        out.value[a] = v[a] * exp(s[i]) + t[i];
        out.logdet = out.logdet + s[i];
    }
    return out;
}

template <class T>
SquashResult<T> coupling_inverse(const CouplingLayer& layer, std::span<const T> params, std::span<const T> v,
                                 std::span<const T> embedding) {
    using std::exp;
    const auto in = coupling_input(layer, v, embedding);
    const auto s = clamped_scale<T>(layer, params, in);
    const auto t = mlp_forward<T>(layer.shift_net, params, in);
    SquashResult<T> out{std::vector<T>(v.begin(), v.end()), T(0.0)};
    for (std::size_t i = 0; i < layer.active.size(); ++i) {
        const auto a = static_cast<std::size_t>(layer.active[i]);
        out.value[a] = (v[a] - t[i]) * exp(-s[i]);
        out.logdet = out.logdet - s[i];
    }
    return out;
}

template <class T>
std::vector<T> flow_embedding(const FlowModel& model, std::span<const T> params, std::span<const double> cond) {
    if (static_cast<int>(cond.size()) != model.conditioner_dim()) {
        throw InvalidArgument("flow: conditioning vector has length " + std::to_string(cond.size()) + ", expected " +
                              std::to_string(model.conditioner_dim()));
    }
    if (model.conditioner_dim() == 0) return {};
    const std::vector<T> in(cond.begin(), cond.end());
    return mlp_forward<T>(model.conditioner(), params, in);
}

template <class T>
SquashResult<T> flow_forward(const FlowModel& model, std::span<const T> params, std::span<const T> z,
                             std::span<const T> embedding) {
    if (static_cast<int>(z.size()) != model.dim()) throw InvalidArgument("flow_forward: wrong base dimension");
    std::vector<T> v(z.begin(), z.end());
    T logdet(0.0);
    for (const auto& layer : model.layers()) {
        auto step = coupling_forward<T>(layer, params, v, embedding);
        v = std::move(step.value);
        logdet = logdet + step.logdet;
    }
    auto sq = squash<T>(model.squash(), v);
    sq.logdet = sq.logdet + logdet;
    return sq;
}

template <class T>
T flow_branch_log_prob(const FlowModel& model, std::span<const T> params, std::span<const T> x,
                       std::span<const T> embedding) {
    auto un = unsquash<T>(model.squash(), x);
    std::vector<T> v = std::move(un.value);
    T logdet = un.logdet;
    const auto& layers = model.layers();
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
        auto step = coupling_inverse<T>(*it, params, v, embedding);
        v = std::move(step.value);
        logdet = logdet + step.logdet;
    }
    return standard_normal_log_density<T>(v) + logdet + log_jacobian_t<T>(model.group(), x);
}

template <class T>
T flow_log_prob_algebra(const FlowModel& model, std::span<const T> params, std::span<const T> x,
                        std::span<const T> embedding) {
    using std::sqrt;
    const double r = model.squash().radius;
    const T rho2 = squared_norm(x);
    const double rho_v = std::sqrt(value(rho2));
    if (rho_v < kIdentityBand) {
        // Other shells sit at radius >= 2 pi - rho, which exceeds every admissible r near the identity.
        if (rho_v >= r - kSupportMargin) return T(-std::numeric_limits<double>::infinity());
        return flow_branch_log_prob<T>(model, params, x, embedding);
    }
    const T rho = sqrt(rho2);
    const int K = model.branch_truncation();
    std::vector<T> terms;
    for (int k = -K; k <= K; ++k) {
        const double radius = std::abs(rho_v + kTwoPi * k);
        if (!(radius < r - kSupportMargin)) continue;
        if (k == 0) {
            terms.push_back(flow_branch_log_prob<T>(model, params, x, embedding));
            continue;
        }
        const T scale = (rho + kTwoPi * k) / rho;
        std::vector<T> xk;
        xk.reserve(x.size());
        for (const T& c : x) xk.push_back(c * scale);
        terms.push_back(flow_branch_log_prob<T>(model, params, xk, embedding));
    }
    if (terms.empty()) return T(-std::numeric_limits<double>::infinity());
    return log_sum_exp_t(terms);
}

template <class T>
FlowDraw<T> flow_rsample(const FlowModel& model, std::span<const T> params, std::span<const double> z,
                         std::span<const T> embedding) {
    using std::sqrt;
    const std::vector<T> zt(z.begin(), z.end());
    auto fwd = flow_forward<T>(model, params, zt, embedding);
    const std::span<const T> x(fwd.value);
    std::vector<T> terms{standard_normal_log_density<T>(zt) - fwd.logdet + log_jacobian_t<T>(model.group(), x)};
    const double r = model.squash().radius;
    const T rho2 = squared_norm(x);
    const double rho_v = std::sqrt(value(rho2));
    if (rho_v >= kIdentityBand) {
        const T rho = sqrt(rho2);
        const int K = model.branch_truncation();
        for (int k = -K; k <= K; ++k) {
            if (k == 0 || !(std::abs(rho_v + kTwoPi * k) < r - kSupportMargin)) continue;
            const T scale = (rho + kTwoPi * k) / rho;
            std::vector<T> xk;
            for (const T& c : x) xk.push_back(c * scale);
            terms.push_back(flow_branch_log_prob<T>(model, params, xk, embedding));
        }
    }
    return {std::move(fwd.value), log_sum_exp_t(terms)};
}

#define LIEPUSH_INSTANTIATE(T)                                                                                       \
    template std::vector<T> mlp_forward<T>(const Mlp&, std::span<const T>, std::span<const T>);                      \
    template SquashResult<T> squash<T>(const RadialSquash&, std::span<const T>);                                      \
    template SquashResult<T> unsquash<T>(const RadialSquash&, std::span<const T>);                                    \
    template SquashResult<T> coupling_forward<T>(const CouplingLayer&, std::span<const T>, std::span<const T>,        \
                                                 std::span<const T>);                                                \
    template SquashResult<T> coupling_inverse<T>(const CouplingLayer&, std::span<const T>, std::span<const T>,        \
                                                 std::span<const T>);                                                \
    template std::vector<T> flow_embedding<T>(const FlowModel&, std::span<const T>, std::span<const double>);        \
    template SquashResult<T> flow_forward<T>(const FlowModel&, std::span<const T>, std::span<const T>,                \
                                             std::span<const T>);                                                    \
    template T flow_branch_log_prob<T>(const FlowModel&, std::span<const T>, std::span<const T>, std::span<const T>); \
    template T flow_log_prob_algebra<T>(const FlowModel&, std::span<const T>, std::span<const T>, std::span<const T>); \
    template FlowDraw<T> flow_rsample<T>(const FlowModel&, std::span<const T>, std::span<const double>,              \
                                         std::span<const T>);

LIEPUSH_INSTANTIATE(double)
LIEPUSH_INSTANTIATE(ad::Var)

#undef LIEPUSH_INSTANTIATE

// --- double-valued entry points ---

std::vector<double> flow_inverse(const FlowModel& model, std::span<const double> x, std::span<const double> cond) {
    const auto params = model.parameters().flat();
    const auto emb = flow_embedding<double>(model, params, cond);
    auto v = unsquash<double>(model.squash(), x).value;
    const auto& layers = model.layers();
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) v = coupling_inverse<double>(*it, params, v, emb).value;
    return v;
}

FlowSample flow_sample(const FlowModel& model, std::span<const double> cond, Rng& rng) {
    const auto params = model.parameters().flat();
    const auto emb = flow_embedding<double>(model, params, cond);
    const auto& G = model.group();
    const int d = model.dim();
    for (int attempt = 0; attempt < kMaxResample; ++attempt) {
        std::vector<double> z(static_cast<std::size_t>(d));
        for (auto& e : z) e = rng.normal();
        auto fwd = flow_forward<double>(model, params, z, emb);
        linalg::Vector x = Eigen::Map<const linalg::Vector>(fwd.value.data(), d);
        if (!is_regular_noise(G, x)) continue;
        // Float rounding can push a draw onto the ball boundary; such draws are resampled.
        if (!(x.norm() < model.squash().radius - kSupportMargin)) continue;
        FlowSample out;
        out.element = compose(model.location(), exp_map(G, {G.tag(), x}));
        out.log_prob = flow_log_prob_algebra<double>(model, params, fwd.value, emb);
        out.algebra = std::move(fwd.value);
        out.base = std::move(z);
        return out;
    }
    throw SingularElement("flow_sample: 100 consecutive draws landed in the singular guard band");
}

double flow_log_prob(const FlowModel& model, const GroupElement& g, std::span<const double> cond) {
    const auto params = model.parameters().flat();
    const auto emb = flow_embedding<double>(model, params, cond);
    const GroupElement h = compose(inverse(model.location()), g);
    const double r = model.squash().radius;
    std::vector<double> terms;
    for (const auto& x : preimage(model.group(), h, model.branch_truncation())) {
        if (!(x.coords.norm() < r - kSupportMargin)) continue;
        terms.push_back(flow_branch_log_prob<double>(model, params, {x.coords.data(), 3}, emb));
    }
    return log_sum_exp(terms);
}

int flow_branch_count(const FlowModel& model, const GroupElement& g) {
    const GroupElement h = compose(inverse(model.location()), g);
    const double r = model.squash().radius;
    int count = 0;
    for (const auto& x : preimage(model.group(), h, model.branch_truncation())) {
        if (x.coords.norm() < r - kSupportMargin) ++count;
    }
    return count;
}

FitResult flow_fit(FlowModel& model, const FlowObjective& objective, const FitConfig& config) {
    if (config.steps < 0) throw InvalidArgument("flow_fit: steps must be >= 0");
    if (!(config.learning_rate > 0.0)) throw InvalidArgument("flow_fit: learning_rate must be positive");
    if (!(config.final_lr_fraction > 0.0 && config.final_lr_fraction <= 1.0)) {
        throw InvalidArgument("flow_fit: final_lr_fraction must be in (0, 1]");
    }
    auto theta = model.parameters().flat();
    const std::size_t n = theta.size();
    std::vector<double> m(n, 0.0);
    std::vector<double> v(n, 0.0);
    std::vector<double> g(n, 0.0);
    FitResult result;
    result.loss_trace.reserve(static_cast<std::size_t>(config.steps));
    ad::Tape tape;
    for (int step = 0; step < config.steps; ++step) {
        tape.clear();
        std::vector<Var> vars;
        vars.reserve(n);
        for (double x : theta) vars.push_back(tape.variable(x));
        const Var loss = objective(tape, vars, step);
        if (!std::isfinite(loss.value())) {
            throw Divergence("flow_fit: non-finite loss at step " + std::to_string(step));
        }
        double norm2 = 0.0;
        if (loss.is_constant()) {
            std::fill(g.begin(), g.end(), 0.0);
        } else {
            const auto adj = tape.adjoints(loss);
            for (std::size_t i = 0; i < n; ++i) {
                g[i] = adj[static_cast<std::size_t>(vars[i].index())];
                norm2 += g[i] * g[i];
            }
        }
        if (!std::isfinite(norm2)) throw Divergence("flow_fit: non-finite gradient at step " + std::to_string(step));
        const double norm = std::sqrt(norm2);
        const double clip = (config.clip_norm > 0.0 && norm > config.clip_norm) ? config.clip_norm / norm : 1.0;
        const double b1 = 1.0 - std::pow(config.beta1, step + 1);
        const double b2 = 1.0 - std::pow(config.beta2, step + 1);
        const double progress = config.steps > 1 ? static_cast<double>(step) / (config.steps - 1) : 0.0;
        const double lr = config.learning_rate *
                          (config.final_lr_fraction +
                           (1.0 - config.final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
        for (std::size_t i = 0; i < n; ++i) {
            const double gi = g[i] * clip;
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            if (gi == 0.0 && m[i] == 0.0) continue;
            theta[i] -= lr * (m[i] / b1) / (std::sqrt(v[i] / b2) + 1e-8);
        }
        result.loss_trace.push_back(loss.value());
    }
    return result;
}

// --- checkpoints ---

std::string save_checkpoint(const FlowModel& model) {
    const auto params = model.parameters().flat();
    Json j;
    j["group"] = model.group().tag().str();
    j["r_squash"] = model.squash().radius;
    j["conditioner_dim"] = model.conditioner_dim();
    j["conditioner"] = mlp_to_json(model.conditioner(), params);
    Json layers = Json::array();
    for (const auto& layer : model.layers()) {
        layers.push_back({{"active", layer.active},
                          {"passive", layer.passive},
                          {"scale_net", mlp_to_json(layer.scale_net, params)},
                          {"shift_net", mlp_to_json(layer.shift_net, params)}});
    }
    j["layers"] = std::move(layers);
    const auto& loc = model.location().matrix;
    std::vector<double> flat;
    for (int r = 0; r < loc.rows(); ++r)
        for (int c = 0; c < loc.cols(); ++c) flat.push_back(loc(r, c));
    j["location"] = flat;
    return j.dump(2);
}

FlowModel load_checkpoint(std::string_view text) {
    Json j;
    try {
        j = Json::parse(text.begin(), text.end());
    } catch (const Json::exception& e) {
        throw InvalidArgument(std::string("checkpoint: malformed JSON: ") + e.what());
    }
    try {
        FlowModel model;
        model.group_ = GroupDescriptor::from_string(j.at("group").get<std::string>());
        if (model.group_.kind() != GroupKind::so3) throw InvalidArgument("checkpoint: flows are so3 only");
        model.squash_.radius = j.at("r_squash").get<double>();
        if (!(model.squash_.radius > 0.0) || !shell_clear(model.squash_.radius)) {
            throw InvalidArgument("checkpoint: invalid r_squash");
        }
        model.conditioner_dim_ = j.value("conditioner_dim", 0);
        if (j.contains("conditioner")) {
            model.conditioner_ = mlp_from_json(j.at("conditioner"), "conditioner", model.params_, true);
        }
        if (model.conditioner_dim_ != model.conditioner_.in()) {
            throw InvalidArgument("checkpoint: conditioner_dim does not match the conditioner network");
        }
        const int d = model.group_.algebra_dim();
        int l = 0;
        for (const auto& jl : j.at("layers")) {
            CouplingLayer layer;
            layer.active = jl.at("active").get<std::vector<int>>();
            layer.passive = jl.at("passive").get<std::vector<int>>();
            std::vector<int> all = layer.active;
            all.insert(all.end(), layer.passive.begin(), layer.passive.end());
            std::sort(all.begin(), all.end());
            std::vector<int> expect(static_cast<std::size_t>(d));
            std::iota(expect.begin(), expect.end(), 0);
            if (all != expect) throw InvalidArgument("checkpoint: layer mask is not a partition of the coordinates");
            layer.scale_net = mlp_from_json(jl.at("scale_net"), layer_prefix(l, "scale"), model.params_, false);
            layer.shift_net = mlp_from_json(jl.at("shift_net"), layer_prefix(l, "shift"), model.params_, false);
            const int in = static_cast<int>(layer.passive.size()) + model.conditioner_.out();
            const int out = static_cast<int>(layer.active.size());
            for (const Mlp* net : {&layer.scale_net, &layer.shift_net}) {
                if (net->in() != in || net->out() != out) {
                    throw InvalidArgument("checkpoint: coupling net widths do not match the mask");
                }
            }
            model.layers_.push_back(std::move(layer));
            ++l;
        }
        const auto loc = j.at("location").get<std::vector<double>>();
        const int m = model.group_.matrix_size();
        if (loc.size() != static_cast<std::size_t>(m * m)) throw InvalidArgument("checkpoint: bad location size");
        linalg::Matrix lm(m, m);
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < m; ++c) lm(r, c) = loc[static_cast<std::size_t>(r * m + c)];
        model.set_location(model.group_.element(lm));
        return model;
    } catch (const Json::exception& e) {
        throw InvalidArgument(std::string("checkpoint: ") + e.what());
    }
}

} // namespace liepush
