#pragma once

// Reverse-mode automatic differentiation on a flat tape.
//
// Every non-constant Var refers to a node on a Tape. A node stores its value
// and a list of (parent, local partial) edges; backward() sweeps the tape in
// reverse and accumulates adjoints. Constants carry no tape and never
// allocate nodes, so templated numeric code can mix doubles and Vars freely.
//
// A tape is single-use per evaluation and confined to one thread.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace liepush::ad {

class Tape;

class Var {
public:
    Var() = default;
    Var(double v) : value_(v) {} // NOLINT(google-explicit-constructor): constants promote implicitly

    double value() const { return value_; }
    int index() const { return index_; }
    Tape* tape() const { return tape_; }
    bool is_constant() const { return tape_ == nullptr; }

private:
    friend class Tape;
    double value_ = 0.0;
    int index_ = -1;
    Tape* tape_ = nullptr;
};

struct Edge {
    std::int32_t parent;
    double partial;
};

class Tape {
public:
    /// New independent variable (a leaf node).
    Var variable(double value);

    /// Records a node whose partials with respect to `parents` are `partials`.
    /// Constant parents are skipped; returns a constant if all are constant.
    Var record(double value, std::span<const Var> parents, std::span<const double> partials);

    Var record(double value, const Var& a, double da);
    Var record(double value, const Var& a, double da, const Var& b, double db);

    /// Adjoints d y / d node for every node on the tape.
    std::vector<double> adjoints(const Var& y) const;

    std::size_t size() const { return values_.size(); }
    std::size_t edge_count() const { return edges_.size(); }
    void clear();

private:
    Var make(double value, std::size_t edge_begin);

    std::vector<double> values_;
    std::vector<std::uint32_t> begin_;
    std::vector<Edge> edges_;
};

inline double value(double x) { return x; }
inline double value(const Var& x) { return x.value(); }

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
Var& operator+=(Var& a, const Var& b);
Var& operator-=(Var& a, const Var& b);
Var& operator*=(Var& a, const Var& b);
Var& operator/=(Var& a, const Var& b);

inline bool operator<(const Var& a, const Var& b) { return a.value() < b.value(); }
inline bool operator>(const Var& a, const Var& b) { return a.value() > b.value(); }
inline bool operator<=(const Var& a, const Var& b) { return a.value() <= b.value(); }
inline bool operator>=(const Var& a, const Var& b) { return a.value() >= b.value(); }

Var exp(const Var& x);
Var log(const Var& x);
Var sin(const Var& x);
Var cos(const Var& x);
Var tanh(const Var& x);
Var sqrt(const Var& x);
Var abs(const Var& x);
Var atanh(const Var& x);
Var log1p(const Var& x);
/// acos with its argument clamped to [-1 + 1e-12, 1 - 1e-12].
Var acos(const Var& x);

/// sum_i a_i * b_i + bias as a single node.
Var dot(std::span<const Var> a, std::span<const Var> b, const Var& bias = Var(0.0));
/// sum_i w_i * x_i + bias with constant weights.
Var dot(std::span<const double> w, std::span<const Var> x, const Var& bias = Var(0.0));
Var sum(std::span<const Var> xs);

/// Named slots of real vectors, flattened into one contiguous vector.
class ParameterSet {
public:
    struct Slot {
        std::string name;
        std::size_t offset;
        std::size_t size;
    };

    /// Appends a slot and returns its offset. Names must be unique.
    std::size_t add(std::string name, std::span<const double> values);
    std::size_t add(std::string name, std::size_t size, double fill = 0.0);

    std::span<const double> flat() const { return values_; }
    std::span<double> flat() { return values_; }
    std::size_t size() const { return values_.size(); }

    const Slot& slot(std::string_view name) const;
    std::span<const double> get(std::string_view name) const;
    std::span<double> get(std::string_view name);
    const std::vector<Slot>& slots() const { return slots_; }

private:
    std::vector<Slot> slots_;
    std::vector<double> values_;
};

/// Scalar objective over a flat parameter vector, recorded on `tape`.
using Objective = std::function<Var(Tape& tape, std::span<const Var> params)>;

/// Exact gradient of `f` at `params` (reverse accumulation). Throws NonFinite
/// when the objective value or any gradient entry is not finite.
Eigen::VectorXd grad(const Objective& f, std::span<const double> params, double* value_out = nullptr);
Eigen::VectorXd grad(const Objective& f, const ParameterSet& params, double* value_out = nullptr);

/// Evaluates `f` without keeping derivatives.
double evaluate(const Objective& f, std::span<const double> params);

/// Max over coordinates of |grad_i - fd_i| / (|grad_i| + 1e-12), where fd is a
/// central difference with step h.
double check_grad(const Objective& f, std::span<const double> params, double h);
double check_grad(const Objective& f, const ParameterSet& params, double h);

} // namespace liepush::ad
