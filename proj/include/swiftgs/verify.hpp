// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
// Numerical verification suite: Taylor-remainder bound of a Gaussian on a
// curved surface, shadow attenuation invariants, router logit bounds, inner
// loop contraction, finite-difference gradient battery and the sample-count
// consistency trend of a 1-D hybrid field.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace swiftgs {

struct GeometricBoundResult {
    int surfaces = 0;
    int samples = 0;
    double worst_ratio = 0.0;         // max over surfaces of mean |remainder| / (kappa sigma^2 / 2)
    int violations = 0;               // surfaces with ratio > 1 + tolerance
    double equality_rel_error = 0.0;  // |mean / bound - 1| for h = kappa |x|^2 / 2, Sigma = sigma^2 / 2 I
    double planar_max_remainder = 0.0;  // kappa = 0
};
GeometricBoundResult geometric_bound_check(std::uint64_t seed, int surfaces = 20, int samples = 100000,
                                           double tolerance = 0.02);

struct ShadowInvariantResult {
    std::size_t evaluations = 0;
    std::size_t out_of_range = 0;
    std::size_t not_monotone = 0;
    std::size_t not_one_when_lit = 0;  // dh <= 0 must give exactly 1
    std::size_t above_envelope = 0;    // s > exp(-rho_min dh) for rho >= rho_min, dh >= 0
    std::size_t zero_rho_not_one = 0;
    std::size_t violations() const {
        return out_of_range + not_monotone + not_one_when_lit + above_envelope + zero_rho_not_one;
    }
};
ShadowInvariantResult shadow_invariant_check(int grid = 1000, int rhos = 10, double rho_min = 0.05);

struct RouterSweepResult {
    int draws = 0;
    int rejected = 0;          // proposals failing the two-sided z-loss constraint
    int bound_violations = 0;  // max |g| > G_max
    int floor_violations = 0;  // min p < exp(-2 G_max / tau) / J
    double min_abs_slack = 0.0;
    double min_prob_slack = 0.0;
    double boundary_gap = 0.0;       // |G_max - g| for J = E = 1, g = G_max
    double boundary_zloss_gap = 0.0; // |z_loss - B_z| in the same construction
    int one_sided_counterexamples = 0;  // draws meeting only the one-sided precondition with max |g| > G_max
};
RouterSweepResult router_bound_sweep(std::uint64_t seed, int draws = 10000);

struct ContractionResult {
    std::vector<int> steps;
    std::vector<double> ratio;     // ||theta_S - theta*|| / ||theta_0 - theta*||
    std::vector<double> expected;  // (1 - eta mu)^S
    double max_error = 0.0;
};
ContractionResult contraction_check(std::uint64_t seed, double mu = 1.0, double eta = 0.1,
                                    const std::vector<int> &steps = {1, 3, 5});

struct GradientEntry {
    std::string term;
    std::string param_class;
    int configs = 0;
    std::size_t coordinates = 0;
    std::size_t excluded = 0;
    double max_rel_error = 0.0;
};
struct GradientBatteryResult {
    std::vector<GradientEntry> entries;
    double max_rel_error = 0.0;
    double excluded_fraction = 0.0;
};
/// Every loss term against every parameter class it depends on, at `configs`
/// random configurations, long double central differences vs reverse mode.
GradientBatteryResult gradient_battery(std::uint64_t seed, int configs = 5);

struct ConsistencyResult {
    std::vector<int> sample_counts;
    std::vector<std::vector<double>> errors;  // [seed][count] held-out mean |W - W*|
    std::vector<double> mean_error;           // per count, averaged over seeds
    int violations = 0;                       // per-seed steps with err_next > (1 + slack) err_prev
};
ConsistencyResult consistency_trend(std::uint64_t seed, const std::vector<int> &sample_counts = {16, 64, 256},
                                    int seeds = 5, double slack = 0.10);

struct VerifyTolerances {
    double geometric = 0.02;
    double router_tight = 1e-9;
    double contraction = 1e-6;
    double gradient = 1e-4;
    double max_excluded_fraction = 0.05;
    double consistency_slack = 0.10;
    int gradient_configs = 5;
    int router_draws = 10000;
    int geometric_samples = 100000;
};

struct VerifyCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct VerifyReport {
    std::vector<VerifyCheck> checks;
    bool all_pass() const;
    /// One "PASS|FAIL name: detail" line per check. Deterministic per seed.
    std::string format() const;
};

VerifyReport verify_bounds(std::uint64_t seed, const VerifyTolerances &tol = {});

}  // namespace swiftgs
