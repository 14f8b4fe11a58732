// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "swiftgs/representation.hpp"

#include <doctest.h>

#include <cmath>

using namespace swiftgs;

TEST_SUITE("autodiff") {

TEST_CASE("square has derivative 2x") {
    const double at[] = {3.0};
    const auto r = grad([](std::span<const Var> x) { return x[0] * x[0]; }, at);
    CHECK(r.value == 9.0);
    CHECK(r.gradient[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("sigmoid slope at zero is a quarter") {
    const double at[] = {0.0};
    const auto r = grad([](std::span<const Var> x) { return sigmoid(x[0]); }, at);
    CHECK(r.gradient[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("elementary functions match closed-form derivatives") {
    const double at[] = {0.7, 1.9};
    const auto r = grad(
        [](std::span<const Var> x) {
            return exp(x[0]) * log(x[1]) + sin(x[0]) / sqrt(x[1]) + tanh(x[0] * x[1]) + pow(x[1], 2.5) +
                   softplus(x[0] - x[1]);
        },
        at);
    const double a = at[0], b = at[1];
    const double sech2 = 1.0 / std::pow(std::cosh(a * b), 2);
    const double sg = 1.0 / (1.0 + std::exp(-(a - b)));
    const double da = std::exp(a) * std::log(b) + std::cos(a) / std::sqrt(b) + b * sech2 + sg;
    const double db = std::exp(a) / b - 0.5 * std::sin(a) * std::pow(b, -1.5) + a * sech2 + 2.5 * std::pow(b, 1.5) - sg;
    CHECK(r.gradient[0] == doctest::Approx(da).epsilon(1e-13));
    CHECK(r.gradient[1] == doctest::Approx(db).epsilon(1e-13));
}

TEST_CASE("check_grad is exact on linear functions") {
    const double at[] = {1.5, -2.0, 0.25};
    const auto rep = check_grad(
        [](auto x) {
            using T = std::remove_cvref_t<decltype(x[0])>;
            return T(3) * x[0] - T(0.5) * x[1] + T(7) * x[2] + T(1);
        },
        at);
    CHECK(rep.max_rel_error <= 1e-10);
    CHECK(rep.excluded.empty());
}

TEST_CASE("check_grad on exp at one stays within the truncation bound") {
    // Central difference error is h^2/6 f''' = e h^2 / 6 relative to e; h = 1e-4 gives ~1.7e-9.
    const double at[] = {1.0};
    const auto rep = check_grad(
        [](auto x) {
            using std::exp;
            return exp(x[0]);
        },
        at);
    CHECK(rep.max_rel_error <= 1e-6);
    CHECK(rep.max_rel_error <= std::exp(1.0) * 1e-8 / 6.0 * 2.0);
}

TEST_CASE("clamp kinks are excluded rather than failed") {
    const double at[] = {1.0, 0.3};
    const auto rep = check_grad(
        [](auto x) {
            using T = std::remove_cvref_t<decltype(x[0])>;
            return sclamp(x[0], -1.0, 1.0) * T(2) + x[1] * x[1];
        },
        at);
    REQUIRE(rep.excluded.size() == 1);
    CHECK(rep.excluded[0] == 0);
    CHECK(rep.max_rel_error <= 1e-8);
    // Subgradient convention: the clamped branch contributes zero, ties take the unclamped branch.
    CHECK(rep.analytic[0] == 2.0);
}

TEST_CASE("tape replay reproduces the forward pass bitwise") {
    Tape tape;
    TapeScope scope(tape);
    Var a(0.3, tape.push_input(0.3)), b(-1.2, tape.push_input(-1.2));
    Var y = a;
    for (int k = 0; k < 20; ++k) y = sigmoid(y * b + a) + exp(y) * cos(b) - abs(y - a);
    CHECK(tape.replay_mismatch() == -1);
    CHECK(tape.first_non_finite() == -1);
    CHECK(std::isfinite(y.v));
}

TEST_CASE("non-finite nodes are located") {
    Tape tape;
    TapeScope scope(tape);
    Var a(0.0, tape.push_input(0.0));
    Var y = log(a) * Var(2.0);
    (void)y;
    CHECK(tape.first_non_finite() >= 0);
}

TEST_CASE("flatten and assign round-trip") {
    Rng rng(11);
    GateField<double> gate = make_gate(6);
    init_gate(gate, rng);
    const ParamVector flat = flatten(gate);
    CHECK(flat.values.size() == param_count(gate));
    GateField<double> other = make_gate(6);
    assign(other, std::span<const double>(flat.values));
    CHECK(flatten(other).values == flat.values);
    const auto &blk = flat.block("gate.out.bias");
    CHECK(blk.size == 1);
    CHECK(flat.values[blk.offset] == gate.out.bias[0]);
    std::vector<double> short_vec(flat.values.begin(), flat.values.end() - 1);
    CHECK_THROWS_AS(assign(other, std::span<const double>(short_vec)), std::invalid_argument);
}

TEST_CASE("check_grad rejects a nonpositive step") {
    const double at[] = {1.0};
    CHECK_THROWS_AS(check_grad([](auto x) { return x[0]; }, at, 0.0), std::invalid_argument);
}

}  // TEST_SUITE
