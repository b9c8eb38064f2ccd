#include "liepush/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "liepush/errors.hpp"

namespace liepush::ad {

namespace {

Tape* tape_of(const Var& a, const Var& b) {
    return a.tape() != nullptr ? a.tape() : b.tape();
}

} // namespace

Var Tape::make(double value, std::size_t edge_begin) {
    Var v(value);
    v.index_ = static_cast<int>(values_.size());
    v.tape_ = this;
    values_.push_back(value);
    begin_.push_back(static_cast<std::uint32_t>(edge_begin));
    return v;
}

Var Tape::variable(double value) {
    return make(value, edges_.size());
}

Var Tape::record(double value, std::span<const Var> parents, std::span<const double> partials) {
    const std::size_t begin = edges_.size();
    for (std::size_t i = 0; i < parents.size(); ++i) {
        if (parents[i].is_constant() || partials[i] == 0.0) continue;
        edges_.push_back({parents[i].index(), partials[i]});
    }
    if (edges_.size() == begin) return Var(value);
    return make(value, begin);
}

Var Tape::record(double value, const Var& a, double da) {
    if (a.is_constant()) return Var(value);
    const std::size_t begin = edges_.size();
    edges_.push_back({a.index(), da});
    return make(value, begin);
}

Var Tape::record(double value, const Var& a, double da, const Var& b, double db) {
    const std::size_t begin = edges_.size();
    if (!a.is_constant()) edges_.push_back({a.index(), da});
    if (!b.is_constant()) edges_.push_back({b.index(), db});
    if (edges_.size() == begin) return Var(value);
    return make(value, begin);
}

std::vector<double> Tape::adjoints(const Var& y) const {
    std::vector<double> adj(values_.size(), 0.0);
    if (y.is_constant()) return adj;
    adj[static_cast<std::size_t>(y.index())] = 1.0;
    for (std::size_t i = static_cast<std::size_t>(y.index()) + 1; i-- > 0;) {
        const double a = adj[i];
        if (a == 0.0) continue;
        const std::size_t end = i + 1 < begin_.size() ? begin_[i + 1] : edges_.size();
        for (std::size_t e = begin_[i]; e < end; ++e) {
            adj[static_cast<std::size_t>(edges_[e].parent)] += a * edges_[e].partial;
        }
    }
    return adj;
}

void Tape::clear() {
    values_.clear();
    begin_.clear();
    edges_.clear();
}

Var operator+(const Var& a, const Var& b) {
    Tape* t = tape_of(a, b);
    const double v = a.value() + b.value();
    return t ? t->record(v, a, 1.0, b, 1.0) : Var(v);
}

Var operator-(const Var& a, const Var& b) {
    Tape* t = tape_of(a, b);
    const double v = a.value() - b.value();
    return t ? t->record(v, a, 1.0, b, -1.0) : Var(v);
}

Var operator*(const Var& a, const Var& b) {
    Tape* t = tape_of(a, b);
    const double v = a.value() * b.value();
    return t ? t->record(v, a, b.value(), b, a.value()) : Var(v);
}

Var operator/(const Var& a, const Var& b) {
    Tape* t = tape_of(a, b);
    const double inv = 1.0 / b.value();
    const double v = a.value() * inv;
    return t ? t->record(v, a, inv, b, -v * inv) : Var(v);
}

Var operator-(const Var& a) {
    return a.tape() ? a.tape()->record(-a.value(), a, -1.0) : Var(-a.value());
}

Var& operator+=(Var& a, const Var& b) { return a = a + b; }
Var& operator-=(Var& a, const Var& b) { return a = a - b; }
Var& operator*=(Var& a, const Var& b) { return a = a * b; }
Var& operator/=(Var& a, const Var& b) { return a = a / b; }

namespace {

Var unary(const Var& x, double v, double d) {
    return x.tape() ? x.tape()->record(v, x, d) : Var(v);
}

} // namespace

Var exp(const Var& x) {
    const double v = std::exp(x.value());
    return unary(x, v, v);
}

Var log(const Var& x) {
    return unary(x, std::log(x.value()), 1.0 / x.value());
}

Var sin(const Var& x) {
    return unary(x, std::sin(x.value()), std::cos(x.value()));
}

Var cos(const Var& x) {
    return unary(x, std::cos(x.value()), -std::sin(x.value()));
}

Var tanh(const Var& x) {
    const double v = std::tanh(x.value());
    return unary(x, v, 1.0 - v * v);
}

Var sqrt(const Var& x) {
    const double v = std::sqrt(x.value());
    return unary(x, v, 0.5 / v);
}

Var abs(const Var& x) {
    return unary(x, std::abs(x.value()), x.value() < 0.0 ? -1.0 : 1.0);
}

Var atanh(const Var& x) {
    const double v = x.value();
    return unary(x, std::atanh(v), 1.0 / (1.0 - v * v));
}

Var log1p(const Var& x) {
    return unary(x, std::log1p(x.value()), 1.0 / (1.0 + x.value()));
}

Var acos(const Var& x) {
    constexpr double kLimit = 1.0 - 1e-12;
    const double c = std::clamp(x.value(), -kLimit, kLimit);
    return unary(x, std::acos(c), -1.0 / std::sqrt(1.0 - c * c));
}

Var dot(std::span<const Var> a, std::span<const Var> b, const Var& bias) {
    Tape* t = bias.tape();
    double v = bias.value();
    for (std::size_t i = 0; i < a.size(); ++i) {
        v += a[i].value() * b[i].value();
        if (!t) t = tape_of(a[i], b[i]);
    }
    if (!t) return Var(v);
    std::vector<Var> parents;
    std::vector<double> partials;
    parents.reserve(2 * a.size() + 1);
    partials.reserve(2 * a.size() + 1);
    for (std::size_t i = 0; i < a.size(); ++i) {
        parents.push_back(a[i]);
        partials.push_back(b[i].value());
        parents.push_back(b[i]);
        partials.push_back(a[i].value());
    }
    parents.push_back(bias);
    partials.push_back(1.0);
    return t->record(v, parents, partials);
}

Var dot(std::span<const double> w, std::span<const Var> x, const Var& bias) {
    Tape* t = bias.tape();
    double v = bias.value();
    for (std::size_t i = 0; i < w.size(); ++i) {
        v += w[i] * x[i].value();
        if (!t) t = x[i].tape();
    }
    if (!t) return Var(v);
    std::vector<Var> parents(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(w.size()));
    std::vector<double> partials(w.begin(), w.end());
    parents.push_back(bias);
    partials.push_back(1.0);
    return t->record(v, parents, partials);
}

Var sum(std::span<const Var> xs) {
    Tape* t = nullptr;
    double v = 0.0;
    for (const auto& x : xs) {
        v += x.value();
        if (!t) t = x.tape();
    }
    if (!t) return Var(v);
    const std::vector<double> ones(xs.size(), 1.0);
    return t->record(v, xs, ones);
}

std::size_t ParameterSet::add(std::string name, std::span<const double> values) {
    for (const auto& s : slots_) {
        if (s.name == name) throw InvalidArgument("ParameterSet: duplicate slot '" + name + "'");
    }
    const std::size_t offset = values_.size();
    slots_.push_back({std::move(name), offset, values.size()});
    values_.insert(values_.end(), values.begin(), values.end());
    return offset;
}

std::size_t ParameterSet::add(std::string name, std::size_t size, double fill) {
    const std::vector<double> values(size, fill);
    return add(std::move(name), values);
}

const ParameterSet::Slot& ParameterSet::slot(std::string_view name) const {
    for (const auto& s : slots_) {
        if (s.name == name) return s;
    }
    throw InvalidArgument("ParameterSet: unknown slot '" + std::string(name) + "'");
}

std::span<const double> ParameterSet::get(std::string_view name) const {
    const auto& s = slot(name);
    return std::span<const double>(values_).subspan(s.offset, s.size);
}

std::span<double> ParameterSet::get(std::string_view name) {
    const auto& s = slot(name);
    return std::span<double>(values_).subspan(s.offset, s.size);
}

Eigen::VectorXd grad(const Objective& f, std::span<const double> params, double* value_out) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (double p : params) vars.push_back(tape.variable(p));
    const Var y = f(tape, vars);
    if (!std::isfinite(y.value())) throw NonFinite("grad: objective value is not finite");
    if (value_out) *value_out = y.value();

    Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
    if (y.is_constant()) return g;
    const auto adj = tape.adjoints(y);
    for (std::size_t i = 0; i < vars.size(); ++i) {
        g[static_cast<Eigen::Index>(i)] = adj[static_cast<std::size_t>(vars[i].index())];
    }
    if (!g.allFinite()) throw NonFinite("grad: gradient is not finite");
    return g;
}

Eigen::VectorXd grad(const Objective& f, const ParameterSet& params, double* value_out) {
    return grad(f, params.flat(), value_out);
}

double evaluate(const Objective& f, std::span<const double> params) {
    Tape tape;
    std::vector<Var> vars(params.begin(), params.end());
    return f(tape, vars).value();
}

double check_grad(const Objective& f, std::span<const double> params, double h) {
    if (!(h > 0.0)) throw InvalidArgument("check_grad: h must be positive");
    const Eigen::VectorXd g = grad(f, params);
    std::vector<double> p(params.begin(), params.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double saved = p[i];
        p[i] = saved + h;
        const double up = evaluate(f, p);
        p[i] = saved - h;
        const double down = evaluate(f, p);
        p[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        const double gi = g[static_cast<Eigen::Index>(i)];
        worst = std::max(worst, std::abs(gi - fd) / (std::abs(gi) + 1e-12));
    }
    return worst;
}

double check_grad(const Objective& f, const ParameterSet& params, double h) {
    return check_grad(f, params.flat(), h);
}

} // namespace liepush::ad
