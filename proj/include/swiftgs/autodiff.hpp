// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over a fixed scalar operation set.
//
// Every numeric routine in the library is written once, templated on its
// scalar type. Instantiated with `double` it is a plain evaluator; instantiated
// with `Var` it records a Wengert list on the calling thread's active `Tape`.
// Values whose tape index is negative are constants and never touch the tape,
// so mixing frozen parameters into a differentiated computation costs no nodes.
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace swiftgs {

enum class Op : std::uint8_t {
    Input,
    Sum,  // aux + sum(parent pairs a*b) + sum(partial * parent)
    Div,
    Exp,
    Log,
    Sqrt,
    Pow,  // parent ^ aux
    Sigmoid,
    Softplus,
    Tanh,
    Abs,
    Sin,
    Cos,
};

const char *op_name(Op op);

/// Raised when a recorded value is NaN or infinite.
class NonFiniteError : public std::runtime_error {
  public:
    NonFiniteError(std::size_t node, Op op);
    std::size_t node() const { return mNode; }
    Op op() const { return mOp; }

  private:
    std::size_t mNode;
    Op mOp;
};

class Tape {
  public:
    struct Node {
        std::uint32_t begin;  // first entry in parents/partials
        std::uint32_t count;  // number of entries
        std::uint32_t pairs;  // Sum nodes: leading entries that form a*b pairs (counted in entries)
        Op op;
        double aux;
    };

    std::size_t size() const { return mNodes.size(); }
    const Node &node(std::size_t i) const { return mNodes[i]; }
    double value(std::size_t i) const { return mValues[i]; }
    std::span<const std::uint32_t> parents(std::size_t i) const {
        return {mParents.data() + mNodes[i].begin, mNodes[i].count};
    }

    std::int32_t push_input(double v);
    std::int32_t push_unary(Op op, double v, std::int32_t parent, double partial, double aux = 0.0);
    std::int32_t push_binary(Op op, double v, std::int32_t a, double da, std::int32_t b, double db);
    /// Generic Sum node. `pairs` leading entries of `parents` are multiplied pairwise.
    std::int32_t push_sum(double v, double c0, std::span<const std::uint32_t> parents,
                          std::span<const double> partials, std::uint32_t pairs);

    /// Adjoints of every node for a seed of 1 on `output`.
    std::vector<double> backward(std::int32_t output) const;

    /// Recompute every node from its parents and recorded constants. Returns
    /// the index of the first node whose recomputed value differs bitwise, or
    /// -1 when the replay reproduces the forward pass exactly.
    std::int64_t replay_mismatch() const;

    /// First non-finite node, or -1.
    std::int64_t first_non_finite() const;

    void clear();

  private:
    std::vector<Node> mNodes;
    std::vector<double> mValues;
    std::vector<std::uint32_t> mParents;
    std::vector<double> mPartials;
};

/// The tape recording on this thread, or nullptr.
Tape *active_tape();

/// Installs a tape as the active one for the current thread for its lifetime.
class TapeScope {
  public:
    explicit TapeScope(Tape &tape);
    ~TapeScope();
    TapeScope(const TapeScope &) = delete;
    TapeScope &operator=(const TapeScope &) = delete;

  private:
    Tape *mPrevious;
};

struct Var {
    double v = 0.0;
    std::int32_t i = -1;

    Var() = default;
    Var(double value) : v(value) {}  // NOLINT: constants convert implicitly
    Var(int value) : v(value) {}     // NOLINT
    Var(double value, std::int32_t index) : v(value), i(index) {}

    bool is_const() const { return i < 0; }
    explicit operator double() const { return v; }

    Var &operator+=(const Var &o);
    Var &operator-=(const Var &o);
    Var &operator*=(const Var &o);
    Var &operator/=(const Var &o);
};

inline double value(double x) { return x; }
inline double value(const Var &x) { return x.v; }
inline double value(long double x) { return static_cast<double>(x); }

/// True when `x` is exactly zero and carries no derivative.
inline bool is_zero_constant(double x) { return x == 0.0; }
inline bool is_zero_constant(long double x) { return x == 0.0L; }
inline bool is_zero_constant(const Var &x) { return x.is_const() && x.v == 0.0; }

Var operator+(const Var &a, const Var &b);
Var operator-(const Var &a, const Var &b);
Var operator*(const Var &a, const Var &b);
Var operator/(const Var &a, const Var &b);
Var operator-(const Var &a);
inline Var operator+(const Var &a) { return a; }

inline bool operator<(const Var &a, const Var &b) { return a.v < b.v; }
inline bool operator>(const Var &a, const Var &b) { return a.v > b.v; }
inline bool operator<=(const Var &a, const Var &b) { return a.v <= b.v; }
inline bool operator>=(const Var &a, const Var &b) { return a.v >= b.v; }
inline bool operator==(const Var &a, const Var &b) { return a.v == b.v; }
inline bool operator!=(const Var &a, const Var &b) { return a.v != b.v; }

Var exp(const Var &x);
Var log(const Var &x);
Var sqrt(const Var &x);
Var pow(const Var &x, double p);
Var tanh(const Var &x);
Var abs(const Var &x);
Var sin(const Var &x);
Var cos(const Var &x);
Var sigmoid(const Var &x);
Var softplus(const Var &x);
inline Var abs2(const Var &x) { return x * x; }
inline bool isfinite(const Var &x) { return std::isfinite(x.v); }

template <class T>
T sigmoid(T x) {
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <class T>
T softplus(T x) {
    using std::abs;
    using std::exp;
    using std::log1p;
    using std::max;
    return max(x, T(0)) + log1p(exp(-abs(x)));
}

/// Selects one operand; the gradient flows to the selected one. Ties pick `a`.
template <class T>
T smin(const T &a, const T &b) {
    return a <= b ? a : b;
}
template <class T>
T smax(const T &a, const T &b) {
    return a >= b ? a : b;
}
/// Clamp with the unclamped branch taken at ties.
template <class T>
T sclamp(const T &x, double lo, double hi) {
    if (x < T(lo)) return T(lo);
    if (x > T(hi)) return T(hi);
    return x;
}

/// c0 + sum_i w[i] * x[i] as a single tape node when differentiated.
double dot_affine(const double *w, const double *x, std::size_t n, double c0);
long double dot_affine(const long double *w, const long double *x, std::size_t n, long double c0);
Var dot_affine(const Var *w, const Var *x, std::size_t n, const Var &c0);

/// Flattened parameters with a stable named index map.
struct ParamVector {
    struct Block {
        std::string name;
        std::size_t offset;
        std::size_t size;
    };
    std::vector<double> values;
    std::vector<Block> blocks;

    std::size_t size() const { return values.size(); }
    /// Index range of a named block; throws if absent.
    const Block &block(const std::string &name) const;
    /// Offsets of all blocks whose name begins with `prefix`.
    std::vector<std::size_t> indices_with_prefix(const std::string &prefix) const;
};

/// Visits every scalar of a model in a fixed order. A model type `M` provides
///   template <class Self, class F> static void visit(Self &self, F &&f)
/// calling f(name, pointer, count) for each contiguous parameter block.
template <class M, class F>
void visit_params(M &model, F &&f) {
    std::remove_const_t<M>::visit(model, std::forward<F>(f));
}

template <class M>
ParamVector flatten(const M &model) {
    ParamVector out;
    visit_params(model, [&](const std::string &name, const auto *data, std::size_t n) {
        out.blocks.push_back({name, out.values.size(), n});
        for (std::size_t k = 0; k < n; ++k) out.values.push_back(value(data[k]));
    });
    return out;
}

/// Writes `values` (in flatten order) into a model of any scalar type.
template <class M, class T>
void assign(M &model, std::span<const T> values) {
    std::size_t cursor = 0;
    visit_params(model, [&](const std::string &, auto *data, std::size_t n) {
        if (cursor + n > values.size()) throw std::invalid_argument("assign: parameter vector too short");
        using D = std::remove_cvref_t<decltype(*data)>;
        for (std::size_t k = 0; k < n; ++k) data[k] = D(values[cursor++]);
    });
    if (cursor != values.size()) throw std::invalid_argument("assign: parameter vector size mismatch");
}

template <class M>
std::size_t param_count(const M &model) {
    std::size_t n = 0;
    visit_params(model, [&](const std::string &, const auto *, std::size_t k) { n += k; });
    return n;
}

struct GradResult {
    double value = 0.0;
    std::vector<double> gradient;
};

/// Differentiates `f` at `at`. `f` is invoked once with std::span<const Var>.
template <class F>
GradResult grad(F &&f, std::span<const double> at) {
    Tape tape;
    TapeScope scope(tape);
    std::vector<Var> inputs;
    inputs.reserve(at.size());
    for (double x : at) inputs.emplace_back(x, tape.push_input(x));
    const Var out = f(std::span<const Var>(inputs));
    if (const auto bad = tape.first_non_finite(); bad >= 0) {
        throw NonFiniteError(static_cast<std::size_t>(bad), tape.node(static_cast<std::size_t>(bad)).op);
    }
    GradResult result;
    result.value = out.v;
    result.gradient.assign(at.size(), 0.0);
    if (out.is_const()) return result;
    const auto adj = tape.backward(out.i);
    for (std::size_t k = 0; k < at.size(); ++k) result.gradient[k] = adj[static_cast<std::size_t>(inputs[k].i)];
    return result;
}

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    /// Coordinates where the one-sided slopes disagree (kinks, clamps, reorderings).
    std::vector<std::size_t> excluded;
    std::vector<double> analytic;
    std::vector<double> numeric;
};

/// Central differences with h_i = max(step, step * |x_i|) against the reverse-mode gradient.
/// The finite-difference side evaluates `f` in scalar type `FdScalar`. A coordinate is
/// excluded (reported, not scored) when its second difference does not shrink
/// quadratically with h, which identifies kinks and jumps at the evaluation point.
template <class FdScalar = long double, class F>
GradCheckReport check_grad(F &&f, std::span<const double> at, double step = 1e-4) {
    if (!(step > 0.0)) throw std::invalid_argument("check_grad: step must be positive");
    GradCheckReport report;
    report.analytic = grad(f, at).gradient;
    report.numeric.assign(at.size(), 0.0);
    std::vector<FdScalar> x(at.begin(), at.end());
    auto eval_at = [&](std::size_t k, FdScalar offset) {
        x[k] = static_cast<FdScalar>(at[k]) + offset;
        const FdScalar y = f(std::span<const FdScalar>(x));
        x[k] = static_cast<FdScalar>(at[k]);
        return y;
    };
    const FdScalar f0 = f(std::span<const FdScalar>(x));
    const FdScalar noise = FdScalar(64) * std::numeric_limits<FdScalar>::epsilon() *
                           std::max<FdScalar>(FdScalar(1), std::abs(f0));
    for (std::size_t k = 0; k < at.size(); ++k) {
        const FdScalar h = std::max<FdScalar>(step, step * std::abs(static_cast<FdScalar>(at[k])));
        const FdScalar fp = eval_at(k, h);
        const FdScalar fm = eval_at(k, -h);
        const FdScalar central = (fp - fm) / (2 * h);
        report.numeric[k] = static_cast<double>(central);
        const FdScalar d2 = fp - 2 * f0 + fm;
        if (std::abs(d2) > noise) {
            const FdScalar d2_half = eval_at(k, h / 2) - 2 * f0 + eval_at(k, -h / 2);
            const FdScalar ratio = d2 / d2_half;
            if (!(ratio > FdScalar(3) && ratio < FdScalar(5))) {
                report.excluded.push_back(k);
                continue;
            }
        }
        const double a = report.analytic[k];
        const double n = report.numeric[k];
        const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = k;
        }
    }
    return report;
}

}  // namespace swiftgs

namespace Eigen {
template <>
struct NumTraits<swiftgs::Var> : NumTraits<double> {
    using Real = swiftgs::Var;
    using NonInteger = swiftgs::Var;
    using Nested = swiftgs::Var;
    using Literal = swiftgs::Var;
    enum {
        IsComplex = 0,
        IsInteger = 0,
        IsSigned = 1,
        RequireInitialization = 1,
        ReadCost = 1,
        AddCost = 4,
        MulCost = 4
    };
};
}  // namespace Eigen
