// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "swiftgs/autodiff.hpp"

#include <algorithm>
#include <bit>

namespace swiftgs {

namespace {

thread_local Tape *gActiveTape = nullptr;

Tape &tape_or_throw() {
    if (gActiveTape == nullptr) throw std::logic_error("differentiable value used without an active tape");
    return *gActiveTape;
}

double sum_value(double c0, const double *parentValues, const double *partials, std::uint32_t count,
                 std::uint32_t pairs) {
    double acc = c0;
    for (std::uint32_t k = 0; k < pairs; k += 2) acc += parentValues[k] * parentValues[k + 1];
    for (std::uint32_t k = pairs; k < count; ++k) acc += partials[k] * parentValues[k];
    return acc;
}

double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double pow_partial(double x, double p) {
    if (x <= 0.0 && p < 1.0) return 0.0;
    return p * std::pow(x, p - 1.0);
}

double unary_value(Op op, double x, double aux) {
    switch (op) {
    case Op::Exp: return std::exp(x);
    case Op::Log: return std::log(x);
    case Op::Sqrt: return std::sqrt(x);
    case Op::Pow: return std::pow(x, aux);
    case Op::Sigmoid: return sigmoid_value(x);
    case Op::Softplus: return softplus_value(x);
    case Op::Tanh: return std::tanh(x);
    case Op::Abs: return std::abs(x);
    case Op::Sin: return std::sin(x);
    case Op::Cos: return std::cos(x);
    default: throw std::logic_error("not a unary op");
    }
}

Var unary(Op op, const Var &x, double aux = 0.0) {
    const double v = unary_value(op, x.v, aux);
    if (x.is_const()) return Var(v);
    double d = 0.0;
    switch (op) {
    case Op::Exp: d = v; break;
    case Op::Log: d = 1.0 / x.v; break;
    case Op::Sqrt: d = v > 0.0 ? 0.5 / v : 0.0; break;
    case Op::Pow: d = pow_partial(x.v, aux); break;
    case Op::Sigmoid: d = v * (1.0 - v); break;
    case Op::Softplus: d = sigmoid_value(x.v); break;
    case Op::Tanh: d = 1.0 - v * v; break;
    case Op::Abs: d = x.v > 0.0 ? 1.0 : (x.v < 0.0 ? -1.0 : 0.0); break;
    case Op::Sin: d = std::cos(x.v); break;
    case Op::Cos: d = -std::sin(x.v); break;
    default: break;
    }
    return Var(v, tape_or_throw().push_unary(op, v, x.i, d, aux));
}

}  // namespace

const char *op_name(Op op) {
    switch (op) {
    case Op::Input: return "input";
    case Op::Sum: return "sum";
    case Op::Div: return "div";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::Pow: return "pow";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softplus: return "softplus";
    case Op::Tanh: return "tanh";
    case Op::Abs: return "abs";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    }
    return "?";
}

NonFiniteError::NonFiniteError(std::size_t node, Op op)
    : std::runtime_error("non-finite value at tape node #" + std::to_string(node) + " (" + op_name(op) + ")"),
      mNode(node), mOp(op) {}

Tape *active_tape() { return gActiveTape; }

TapeScope::TapeScope(Tape &tape) : mPrevious(gActiveTape) { gActiveTape = &tape; }
TapeScope::~TapeScope() { gActiveTape = mPrevious; }

std::int32_t Tape::push_input(double v) {
    mNodes.push_back({static_cast<std::uint32_t>(mParents.size()), 0, 0, Op::Input, 0.0});
    mValues.push_back(v);
    return static_cast<std::int32_t>(mNodes.size() - 1);
}

std::int32_t Tape::push_unary(Op op, double v, std::int32_t parent, double partial, double aux) {
    mNodes.push_back({static_cast<std::uint32_t>(mParents.size()), 1, 0, op, aux});
    mParents.push_back(static_cast<std::uint32_t>(parent));
    mPartials.push_back(partial);
    mValues.push_back(v);
    return static_cast<std::int32_t>(mNodes.size() - 1);
}

std::int32_t Tape::push_binary(Op op, double v, std::int32_t a, double da, std::int32_t b, double db) {
    mNodes.push_back({static_cast<std::uint32_t>(mParents.size()), 2, 0, op, 0.0});
    mParents.push_back(static_cast<std::uint32_t>(a));
    mParents.push_back(static_cast<std::uint32_t>(b));
    mPartials.push_back(da);
    mPartials.push_back(db);
    mValues.push_back(v);
    return static_cast<std::int32_t>(mNodes.size() - 1);
}

std::int32_t Tape::push_sum(double v, double c0, std::span<const std::uint32_t> parents,
                            std::span<const double> partials, std::uint32_t pairs) {
    mNodes.push_back({static_cast<std::uint32_t>(mParents.size()), static_cast<std::uint32_t>(parents.size()),
                      pairs, Op::Sum, c0});
    mParents.insert(mParents.end(), parents.begin(), parents.end());
    mPartials.insert(mPartials.end(), partials.begin(), partials.end());
    mValues.push_back(v);
    return static_cast<std::int32_t>(mNodes.size() - 1);
}

std::vector<double> Tape::backward(std::int32_t output) const {
    std::vector<double> adj(mNodes.size(), 0.0);
    if (output < 0) return adj;
    adj[static_cast<std::size_t>(output)] = 1.0;
    for (std::size_t n = static_cast<std::size_t>(output) + 1; n-- > 0;) {
        const double a = adj[n];
        if (a == 0.0) continue;
        const Node &node = mNodes[n];
        for (std::uint32_t k = 0; k < node.count; ++k) {
            adj[mParents[node.begin + k]] += mPartials[node.begin + k] * a;
        }
    }
    return adj;
}

std::int64_t Tape::replay_mismatch() const {
    std::vector<double> parentValues;
    for (std::size_t n = 0; n < mNodes.size(); ++n) {
        const Node &node = mNodes[n];
        if (node.op == Op::Input) continue;
        parentValues.resize(node.count);
        for (std::uint32_t k = 0; k < node.count; ++k) parentValues[k] = mValues[mParents[node.begin + k]];
        double v = 0.0;
        switch (node.op) {
        case Op::Sum:
            v = sum_value(node.aux, parentValues.data(), mPartials.data() + node.begin, node.count, node.pairs);
            break;
        case Op::Div:
            v = node.count == 2 ? parentValues[0] / parentValues[1] : node.aux / parentValues[0];
            break;
        default: v = unary_value(node.op, parentValues[0], node.aux); break;
        }
        if (std::bit_cast<std::uint64_t>(v) != std::bit_cast<std::uint64_t>(mValues[n])) {
            return static_cast<std::int64_t>(n);
        }
    }
    return -1;
}

std::int64_t Tape::first_non_finite() const {
    for (std::size_t n = 0; n < mValues.size(); ++n) {
        if (!std::isfinite(mValues[n])) return static_cast<std::int64_t>(n);
    }
    return -1;
}

void Tape::clear() {
    mNodes.clear();
    mValues.clear();
    mParents.clear();
    mPartials.clear();
}

// Var arithmetic. Sum nodes carry partials explicitly, so a replay of a
// two-operand sum computes c0 + 1*a + (+/-1)*b which is bitwise a +/- b.

Var operator+(const Var &a, const Var &b) {
    if (a.is_const() && b.is_const()) return Var(a.v + b.v);
    if (a.is_const() || b.is_const()) {
        const Var &x = a.is_const() ? b : a;
        const double c = a.is_const() ? a.v : b.v;
        const double v = c + 1.0 * x.v;
        const std::uint32_t parents[1] = {static_cast<std::uint32_t>(x.i)};
        const double partials[1] = {1.0};
        return Var(v, tape_or_throw().push_sum(v, c, parents, partials, 0));
    }
    const double v = 0.0 + 1.0 * a.v + 1.0 * b.v;
    const std::uint32_t parents[2] = {static_cast<std::uint32_t>(a.i), static_cast<std::uint32_t>(b.i)};
    const double partials[2] = {1.0, 1.0};
    return Var(v, tape_or_throw().push_sum(v, 0.0, parents, partials, 0));
}

Var operator-(const Var &a, const Var &b) {
    if (a.is_const() && b.is_const()) return Var(a.v - b.v);
    if (b.is_const()) {
        const double v = -b.v + 1.0 * a.v;
        const std::uint32_t parents[1] = {static_cast<std::uint32_t>(a.i)};
        const double partials[1] = {1.0};
        return Var(v, tape_or_throw().push_sum(v, -b.v, parents, partials, 0));
    }
    if (a.is_const()) {
        const double v = a.v + -1.0 * b.v;
        const std::uint32_t parents[1] = {static_cast<std::uint32_t>(b.i)};
        const double partials[1] = {-1.0};
        return Var(v, tape_or_throw().push_sum(v, a.v, parents, partials, 0));
    }
    const double v = 0.0 + 1.0 * a.v + -1.0 * b.v;
    const std::uint32_t parents[2] = {static_cast<std::uint32_t>(a.i), static_cast<std::uint32_t>(b.i)};
    const double partials[2] = {1.0, -1.0};
    return Var(v, tape_or_throw().push_sum(v, 0.0, parents, partials, 0));
}

Var operator*(const Var &a, const Var &b) {
    if (a.is_const() && b.is_const()) return Var(a.v * b.v);
    if (a.is_const() || b.is_const()) {
        const Var &x = a.is_const() ? b : a;
        const double c = a.is_const() ? a.v : b.v;
        const double v = 0.0 + c * x.v;
        const std::uint32_t parents[1] = {static_cast<std::uint32_t>(x.i)};
        const double partials[1] = {c};
        return Var(v, tape_or_throw().push_sum(v, 0.0, parents, partials, 0));
    }
    const double v = 0.0 + a.v * b.v;
    const std::uint32_t parents[2] = {static_cast<std::uint32_t>(a.i), static_cast<std::uint32_t>(b.i)};
    const double partials[2] = {b.v, a.v};
    return Var(v, tape_or_throw().push_sum(v, 0.0, parents, partials, 2));
}

Var operator/(const Var &a, const Var &b) {
    if (a.is_const() && b.is_const()) return Var(a.v / b.v);
    if (b.is_const()) return a * Var(1.0 / b.v);
    const double v = a.v / b.v;
    if (a.is_const()) {
        // Single-parent Div: value = aux / parent.
        return Var(v, tape_or_throw().push_unary(Op::Div, v, b.i, -v / b.v, a.v));
    }
    return Var(v, tape_or_throw().push_binary(Op::Div, v, a.i, 1.0 / b.v, b.i, -v / b.v));
}

Var operator-(const Var &a) {
    if (a.is_const()) return Var(-a.v);
    const double v = 0.0 + -1.0 * a.v;
    const std::uint32_t parents[1] = {static_cast<std::uint32_t>(a.i)};
    const double partials[1] = {-1.0};
    return Var(v, tape_or_throw().push_sum(v, 0.0, parents, partials, 0));
}

Var &Var::operator+=(const Var &o) { return *this = *this + o; }
Var &Var::operator-=(const Var &o) { return *this = *this - o; }
Var &Var::operator*=(const Var &o) { return *this = *this * o; }
Var &Var::operator/=(const Var &o) { return *this = *this / o; }

Var exp(const Var &x) { return unary(Op::Exp, x); }
Var log(const Var &x) { return unary(Op::Log, x); }
Var sqrt(const Var &x) { return unary(Op::Sqrt, x); }
Var pow(const Var &x, double p) { return unary(Op::Pow, x, p); }
Var tanh(const Var &x) { return unary(Op::Tanh, x); }
Var abs(const Var &x) { return unary(Op::Abs, x); }
Var sin(const Var &x) { return unary(Op::Sin, x); }
Var cos(const Var &x) { return unary(Op::Cos, x); }
Var sigmoid(const Var &x) { return unary(Op::Sigmoid, x); }
Var softplus(const Var &x) { return unary(Op::Softplus, x); }

double dot_affine(const double *w, const double *x, std::size_t n, double c0) {
    double acc = c0;
    for (std::size_t k = 0; k < n; ++k) acc += w[k] * x[k];
    return acc;
}

long double dot_affine(const long double *w, const long double *x, std::size_t n, long double c0) {
    long double acc = c0;
    for (std::size_t k = 0; k < n; ++k) acc += w[k] * x[k];
    return acc;
}

Var dot_affine(const Var *w, const Var *x, std::size_t n, const Var &c0) {
    thread_local std::vector<std::uint32_t> pairParents, linParents;
    thread_local std::vector<double> pairPartials, linPartials;
    pairParents.clear();
    pairPartials.clear();
    linParents.clear();
    linPartials.clear();
    double constant = c0.is_const() ? c0.v : 0.0;
    if (!c0.is_const()) {
        linParents.push_back(static_cast<std::uint32_t>(c0.i));
        linPartials.push_back(1.0);
    }
    for (std::size_t k = 0; k < n; ++k) {
        const Var &a = w[k];
        const Var &b = x[k];
        if (a.is_const() && b.is_const()) {
            constant += a.v * b.v;
        } else if (a.is_const()) {
            if (a.v == 0.0) continue;
            linParents.push_back(static_cast<std::uint32_t>(b.i));
            linPartials.push_back(a.v);
        } else if (b.is_const()) {
            if (b.v == 0.0) continue;
            linParents.push_back(static_cast<std::uint32_t>(a.i));
            linPartials.push_back(b.v);
        } else {
            pairParents.push_back(static_cast<std::uint32_t>(a.i));
            pairParents.push_back(static_cast<std::uint32_t>(b.i));
            pairPartials.push_back(b.v);
            pairPartials.push_back(a.v);
        }
    }
    if (pairParents.empty() && linParents.empty()) return Var(constant);
    const auto pairs = static_cast<std::uint32_t>(pairParents.size());
    pairParents.insert(pairParents.end(), linParents.begin(), linParents.end());
    pairPartials.insert(pairPartials.end(), linPartials.begin(), linPartials.end());
    Tape &tape = tape_or_throw();
    std::vector<double> parentValues(pairParents.size());
    for (std::size_t k = 0; k < pairParents.size(); ++k) parentValues[k] = tape.value(pairParents[k]);
    const double v = sum_value(constant, parentValues.data(), pairPartials.data(),
                               static_cast<std::uint32_t>(pairParents.size()), pairs);
    return Var(v, tape.push_sum(v, constant, pairParents, pairPartials, pairs));
}

const ParamVector::Block &ParamVector::block(const std::string &name) const {
    for (const auto &b : blocks) {
        if (b.name == name) return b;
    }
    throw std::out_of_range("no parameter block named '" + name + "'");
}

std::vector<std::size_t> ParamVector::indices_with_prefix(const std::string &prefix) const {
    std::vector<std::size_t> out;
    for (const auto &b : blocks) {
        if (b.name.compare(0, prefix.size(), prefix) == 0) {
            for (std::size_t k = 0; k < b.size; ++k) out.push_back(b.offset + k);
        }
    }
    return out;
}

}  // namespace swiftgs
