// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "swiftgs/objectives.hpp"
#include "swiftgs/representation.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace swiftgs;

namespace {

Vec4<double> random_quaternion(Rng &rng) {
    Vec4<double> q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    return q / q.norm();
}

GaussianPrimitive<double> random_primitive(Rng &rng, double spread = 10.0) {
    GaussianPrimitive<double> p;
    p.center = Vec3<double>(rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(-spread, spread));
    p.geom.rotation = random_quaternion(rng);
    p.geom.log_scales = Vec3<double>(rng.uniform(-1, 1.5), rng.uniform(-1, 1.5), rng.uniform(-1, 1.5));
    p.radio.rotation = random_quaternion(rng);
    p.radio.log_scales = Vec3<double>(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    p.opacity_logit = rng.uniform(-4, 4);
    return p;
}

SlotSet<double> random_slots(Rng &rng, std::size_t capacity, std::size_t active) {
    SlotSet<double> s(capacity);
    for (std::size_t k = 0; k < active; ++k) s.insert(random_primitive(rng));
    return s;
}

template <class T>
struct HybridModel {
    SlotSet<T> *slots;
    SdfField<T> *sdf;
    GateField<T> *gate;
    template <class Self, class F>
    static void visit(Self &self, F &&f) {
        SlotSet<T>::visit(*self.slots, f);
        SdfField<T>::visit(*self.sdf, f);
        GateField<T>::visit(*self.gate, f);
    }
};

}  // namespace

TEST_SUITE("representation") {

TEST_CASE("covariance of unit factors is the identity") {
    CovarianceFactors<double> f;
    CHECK((covariance_from_factors(f) - Mat3<double>::Identity()).norm() == 0.0);
}

TEST_CASE("log scale ln 2 squares to 4") {
    CovarianceFactors<double> f;
    f.log_scales[0] = std::log(2.0);
    const Mat3<double> c = covariance_from_factors(f);
    CHECK(c(0, 0) == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(c(1, 1) == 1.0);
    CHECK(c(2, 2) == 1.0);
    CHECK(c(0, 1) == 0.0);
}

TEST_CASE("covariance eigenvalues are the squared scales") {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        CovarianceFactors<double> f;
        f.rotation = random_quaternion(rng);
        f.log_scales = Vec3<double>(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
        Eigen::SelfAdjointEigenSolver<Mat3<double>> es(covariance_from_factors(f));
        std::array<double, 3> want{std::exp(2 * f.log_scales[0]), std::exp(2 * f.log_scales[1]),
                                   std::exp(2 * f.log_scales[2])};
        std::sort(want.begin(), want.end());
        for (int a = 0; a < 3; ++a) CHECK(es.eigenvalues()[a] == doctest::Approx(want[a]).epsilon(1e-10));
    }
}

TEST_CASE("covariance is SPD for 1e4 random factor draws") {
    Rng rng(5);
    int failures = 0;
    for (int t = 0; t < 10000; ++t) {
        CovarianceFactors<double> f;
        f.rotation = random_quaternion(rng);
        f.log_scales = Vec3<double>(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
        const Mat3<double> c = covariance_from_factors(f);
        Eigen::LLT<Mat3<double>> llt(c);
        if (llt.info() != Eigen::Success || (c - c.transpose()).norm() != 0.0) ++failures;
    }
    CHECK(failures == 0);
}

TEST_CASE("precision is the inverse covariance") {
    Rng rng(6);
    CovarianceFactors<double> f;
    f.rotation = random_quaternion(rng);
    f.log_scales = Vec3<double>(0.3, -0.4, 1.1);
    const Mat3<double> prod = covariance_from_factors(f) * precision_from_factors(f);
    CHECK((prod - Mat3<double>::Identity()).norm() < 1e-12);
}

TEST_CASE("renormalized quaternions have unit norm") {
    Rng rng(8);
    for (int t = 0; t < 100; ++t) {
        CovarianceFactors<double> f;
        f.rotation = Vec4<double>(rng.normal(), rng.normal(), rng.normal(), rng.normal()) * rng.uniform(0.1, 10);
        f.renormalize();
        CHECK(std::abs(f.rotation.norm() - 1.0) <= 1e-9);
    }
}

TEST_CASE("opacity stays inside the open unit interval") {
    for (double l : {-30.0, -3.0, 0.0, 3.0, 30.0}) {
        GaussianPrimitive<double> p;
        p.opacity_logit = l;
        CHECK(p.opacity() > 0.0);
        CHECK(p.opacity() <= 1.0);
    }
}

TEST_CASE("zero-weight SDF returns its final bias") {
    SdfField<double> sdf = make_sdf(4, 8, 2, 3);
    sdf.layers.back().bias[0] = -0.37;
    Rng rng(2);
    for (int t = 0; t < 10; ++t) {
        const Vec3<double> x(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        CHECK(eval_sdf(sdf, x) == -0.37);
    }
}

TEST_CASE("plane SDF changes sign across its level") {
    const SdfField<double> sdf = make_plane_sdf(4, 8, 3, 0, 0.0);
    Rng rng(4);
    for (int t = 0; t < 200; ++t) {
        const double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1), z = rng.uniform(0.01, 1);
        CHECK(eval_sdf(sdf, Vec3<double>(x, y, z)) > 0.0);
        CHECK(eval_sdf(sdf, Vec3<double>(x, y, -z)) < 0.0);
        CHECK(eval_sdf(sdf, Vec3<double>(x, y, z)) == doctest::Approx(z).epsilon(1e-9));
    }
}

TEST_CASE("SDF is finite over the whole box and clamps outside it") {
    Rng rng(9);
    SdfField<double> sdf = make_sdf(4, 16, 4, 8);
    init_sdf(sdf, rng);
    for (int t = 0; t < 500; ++t) {
        const Vec3<double> x(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        bool clamped = true;
        CHECK(std::isfinite(eval_sdf(sdf, x, &clamped)));
        CHECK_FALSE(clamped);
    }
    bool clamped = false;
    const double far = eval_sdf(sdf, Vec3<double>(3.0, 0.2, -0.1), &clamped);
    CHECK(clamped);
    CHECK(far == eval_sdf(sdf, Vec3<double>(1.0, 0.2, -0.1)));
}

TEST_CASE("analytic SDF gradient matches finite differences") {
    Rng rng(10);
    SdfField<double> sdf = make_sdf(4, 8, 2, 0);
    init_sdf(sdf, rng);
    const Vec3<double> x(0.2, -0.3, 0.4);
    const auto vg = eval_sdf_grad(sdf, x);
    CHECK(vg.value == doctest::Approx(eval_sdf(sdf, x)).epsilon(1e-14));
    for (int a = 0; a < 3; ++a) {
        Vec3<double> xp = x, xm = x;
        xp[a] += 1e-6;
        xm[a] -= 1e-6;
        const double fd = (eval_sdf(sdf, xp) - eval_sdf(sdf, xm)) / 2e-6;
        CHECK(vg.gradient[a] == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("eikonal residual is finite for a random network") {
    Rng rng(12);
    SdfField<double> sdf = make_sdf(4, 8, 2, 0);
    init_sdf(sdf, rng);
    std::vector<Vec3<double>> pts;
    for (int k = 0; k < 16; ++k) pts.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const auto parts = sdf_loss_parts<double>(sdf, pts, {});
    CHECK(std::isfinite(parts.eikonal));
    CHECK(parts.eikonal >= 0.0);
}

TEST_CASE("zero gate weights give one half") {
    const GateField<double> gate = make_gate(8);
    const VecX<double> z = VecX<double>::Zero(kLatentDim);
    CHECK(eval_gate(z, Vec3<double>(0.1, 0.2, 0.3), gate) == 0.5);
}

TEST_CASE("a +20 gate bias saturates") {
    GateField<double> gate = make_gate(8);
    gate.out.bias[0] = 20.0;
    const VecX<double> z = VecX<double>::Zero(kLatentDim);
    CHECK(eval_gate(z, Vec3<double>(0.1, 0.2, 0.3), gate) > 1.0 - 1e-8);
}

TEST_CASE("gate is Lipschitz with the norm-product bound") {
    Rng rng(13);
    for (int t = 0; t < 20; ++t) {
        GateField<double> gate = make_gate(12);
        init_gate(gate, rng);
        const double lip = gate_lipschitz_bound(gate);
        // Independent bound: Frobenius norms dominate operator norms.
        CHECK(lip <= gate.hidden.weight.norm() * gate.out.weight.norm() * 0.25 + 1e-12);
        VecX<double> z(kLatentDim);
        for (int k = 0; k < kLatentDim; ++k) z[k] = rng.uniform(-1, 1);
        const Vec3<double> x(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        const Vec3<double> dx(rng.uniform(-1e-2, 1e-2), rng.uniform(-1e-2, 1e-2), rng.uniform(-1e-2, 1e-2));
        const double d = std::abs(eval_gate(z, Vec3<double>(x + dx), gate) - eval_gate(z, x, gate));
        CHECK(d <= lip * dx.norm() * (1 + 1e-9));
    }
}

TEST_CASE("hybrid endpoints reproduce the pure components") {
    Rng rng(14);
    const SlotSet<double> slots = random_slots(rng, 6, 5);
    SdfField<double> sdf = make_sdf(3, 8, 2, 0);
    init_sdf(sdf, rng);
    GateField<double> gate = make_gate(8);
    init_gate(gate, rng);
    const VecX<double> z = VecX<double>::Zero(kLatentDim);
    SceneBox box;
    box.lo = Vec3<double>(-16, -16, -16);
    box.hi = Vec3<double>(16, 16, 16);
    for (int t = 0; t < 50; ++t) {
        const Vec3<double> x(rng.uniform(-12, 12), rng.uniform(-12, 12), rng.uniform(-12, 12));
        const auto g1 = eval_hybrid(x, slots, sdf, gate, z, box, 1.0);
        const auto g0 = eval_hybrid(x, slots, sdf, gate, z, box, 0.0);
        CHECK(g1.density == gaussian_density(x, slots));
        CHECK(g0.density == sdf_density(sdf, box.normalize(x)));
        const auto h = eval_hybrid(x, slots, sdf, gate, z, box);
        CHECK(h.density >= std::min(g1.density, g0.density));
        CHECK(h.density <= std::max(g1.density, g0.density));
    }
}

TEST_CASE("single Gaussian at its mean gives its opacity") {
    SlotSet<double> slots(1);
    GaussianPrimitive<double> p;
    p.center = Vec3<double>(1, 2, 3);
    p.opacity_logit = std::log(0.8 / 0.2);
    slots.insert(p);
    const SdfField<double> sdf = make_sdf(2, 4, 1, 0);
    const GateField<double> gate = make_gate(4);
    const auto s = eval_hybrid(p.center, slots, sdf, gate, VecX<double>(VecX<double>::Zero(kLatentDim)), SceneBox{}, 1.0);
    CHECK(s.density == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("prune with every opacity above the threshold is a no-op") {
    Rng rng(15);
    SlotSet<double> s(8);
    for (int k = 0; k < 6; ++k) {
        auto p = random_primitive(rng);
        p.opacity_logit = rng.uniform(0, 3);
        s.insert(p);
    }
    const auto before = flatten(s).values;
    const auto active = s.active;
    CHECK(prune(s, 0.01) == 0);
    CHECK(flatten(s).values == before);
    CHECK(s.active == active);
}

TEST_CASE("prune removes exactly the faint slot") {
    SlotSet<double> s(4);
    for (double a : {0.5, 0.005, 0.9}) {
        GaussianPrimitive<double> p;
        p.opacity_logit = std::log(a / (1 - a));
        s.insert(p);
    }
    CHECK(prune(s, 0.01) == 1);
    CHECK(s.active == std::vector<std::uint8_t>{1, 0, 1, 0});
}

TEST_CASE("prune matches a direct scan and keeps its invariants") {
    Rng rng(16);
    for (int t = 0; t < 200; ++t) {
        SlotSet<double> s = random_slots(rng, 16, rng.index(17));
        const double amin = rng.uniform(0.01, 0.5);
        std::size_t expected = 0;
        double mass_before = 0.0;
        for (std::size_t k = 0; k < s.capacity(); ++k) {
            if (!s.active[k]) continue;
            mass_before += s.slots[k].opacity();
            if (s.slots[k].opacity() >= amin) ++expected;
        }
        SlotSet<double> lower = s;
        prune(s, amin);
        CHECK(s.active_count() == expected);
        double mass_after = 0.0;
        for (std::size_t k = 0; k < s.capacity(); ++k)
            if (s.active[k]) {
                mass_after += s.slots[k].opacity();
                CHECK(s.slots[k].opacity() >= amin);
            }
        CHECK(mass_after <= mass_before);
        SlotSet<double> twice = s;
        CHECK(prune(twice, amin) == 0);
        CHECK(twice.active == s.active);
        prune(lower, amin * 0.5);
        CHECK(lower.active_count() >= s.active_count());
    }
    SlotSet<double> s(2);
    CHECK_THROWS_AS(prune(s, 0.0), std::invalid_argument);
}

TEST_CASE("split-merge is a no-op below thresholds with separated slots") {
    SlotSet<double> s(6);
    for (int k = 0; k < 3; ++k) {
        GaussianPrimitive<double> p;
        p.center = Vec3<double>(20.0 * k, 0, 0);
        s.insert(p);
    }
    const auto before = flatten(s).values;
    const std::vector<double> residual(6, 0.0);
    const auto rep = split_merge(s, residual, {});
    CHECK(rep.splits == 0);
    CHECK(rep.merges == 0);
    CHECK(flatten(s).values == before);
}

TEST_CASE("a split adds one slot and preserves the mean center") {
    Rng rng(17);
    SlotSet<double> s(4);
    const auto parent = random_primitive(rng);
    s.insert(parent);
    std::vector<double> residual(4, 0.0);
    residual[0] = 1.0;
    const auto rep = split_merge(s, residual, {});
    CHECK(rep.splits == 1);
    CHECK(s.active_count() == 2);
    const Vec3<double> mid = 0.5 * (s.slots[0].center + s.slots[1].center);
    CHECK((mid - parent.center).norm() < 1e-12);
}

TEST_CASE("merging identical Gaussians matches the mixture moments") {
    Rng rng(18);
    const auto p = random_primitive(rng);
    SlotSet<double> s(3);
    s.insert(p);
    s.insert(p);
    const auto rep = split_merge(s, std::vector<double>(3, 0.0), {});
    CHECK(rep.merges == 1);
    CHECK(s.active_count() == 1);
    // Equal weights: mean is the common center, covariance the common covariance.
    CHECK((s.slots[0].center - p.center).norm() < 1e-12);
    const Mat3<double> want = covariance_from_factors(p.geom);
    CHECK((covariance_from_factors(s.slots[0].geom) - want).norm() < 1e-9 * want.norm());
    const double a = p.opacity();
    CHECK(s.slots[0].opacity() == doctest::Approx(1 - (1 - a) * (1 - a)).epsilon(1e-12));
}

TEST_CASE("split-merge never exceeds capacity and reports skipped splits") {
    Rng rng(19);
    for (int t = 0; t < 100; ++t) {
        SlotSet<double> s = random_slots(rng, 8, 1 + rng.index(8));
        std::vector<double> residual(8);
        for (auto &r : residual) r = rng.uniform(0, 0.1);
        const std::size_t before = s.active_count();
        const auto rep = split_merge(s, residual, {});
        CHECK(s.active_count() <= s.capacity());
        CHECK(s.active_count() == before + rep.splits - rep.merges);
    }
}

TEST_CASE("hybrid density gradients match finite differences for every class") {
    Rng rng(20);
    const SlotSet<double> slots = random_slots(rng, 3, 3);
    SdfField<double> sdf = make_sdf(3, 6, 1, 0);
    init_sdf(sdf, rng);
    GateField<double> gate = make_gate(4);
    init_gate(gate, rng);
    SceneBox box;
    box.lo = Vec3<double>(-16, -16, -16);
    box.hi = Vec3<double>(16, 16, 16);
    const Vec3<double> x(1.5, -2.0, 0.5);
    SlotSet<double> s = slots;
    HybridModel<double> m{&s, &sdf, &gate};
    const ParamVector flat = flatten(m);
    const auto f = [&](auto p) {
        using T = std::remove_cvref_t<decltype(p[0])>;
        SlotSet<T> ts = s.template cast<T>();
        SdfField<T> tsdf = sdf.template cast<T>();
        GateField<T> tg = gate.template cast<T>();
        HybridModel<T> tm{&ts, &tsdf, &tg};
        assign(tm, p);
        const VecX<T> z = VecX<T>::Zero(kLatentDim);
        return eval_hybrid(Vec3<T>(T(x[0]), T(x[1]), T(x[2])), ts, tsdf, tg, z, box).density;
    };
    const auto rep = check_grad(f, std::span<const double>(flat.values), 1e-5);
    CHECK(rep.max_rel_error <= 1e-4);
    CHECK(rep.excluded.empty());
}

}  // TEST_SUITE
