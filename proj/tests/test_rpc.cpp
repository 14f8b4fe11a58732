// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "swiftgs/rpc.hpp"

#include <Eigen/Geometry>
#include <doctest.h>

#include <cmath>

using namespace swiftgs;

namespace {

Eigen::Matrix<double, 3, 4> sample_affine() {
    Eigen::Matrix<double, 3, 4> a = Eigen::Matrix<double, 3, 4>::Zero();
    a.row(0) << 0.0, -1.0, 0.2, 40.0;
    a.row(1) << 1.0, 0.0, 0.1, 2.0;
    a.row(2) << 0.0, 0.0, -1.0, 56.0;
    return a;
}

RpcMetadata sample_rpc(double cubic = 0.0) {
    return rpc_from_affine(sample_affine(), Vec3<double>(16, 16, 24), Vec3<double>(16, 16, 32), cubic);
}

RpcMetadata random_rpc(Rng &rng) {
    RpcMetadata r = sample_rpc(rng.uniform(-0.05, 0.05));
    for (double *x : {&r.line_off, &r.samp_off, &r.lat_off, &r.long_off, &r.height_off}) *x += rng.uniform(-1e3, 1e3);
    for (auto *arr : {&r.line_num, &r.samp_num})
        for (auto &c : *arr) c = rng.normal() * std::pow(10.0, rng.uniform(-12, 2));
    return r;
}

}  // namespace

TEST_SUITE("rpc") {

TEST_CASE("affine construction reproduces the affine map exactly") {
    const RpcMetadata rpc = sample_rpc();
    const auto a = sample_affine();
    Rng rng(1);
    for (int t = 0; t < 100; ++t) {
        const Vec3<double> x(rng.uniform(0, 32), rng.uniform(0, 32), rng.uniform(-8, 56));
        const auto e = rpc_project(rpc, x);
        const Vec2<double> want = a.topRows<2>() * x.homogeneous();
        CHECK((e.pixel - want).norm() <= 1e-10);
        CHECK((e.jacobian - a.block<2, 3>(0, 0)).norm() <= 1e-12);
    }
}

TEST_CASE("jacobian matches central differences with cubic terms") {
    const RpcMetadata rpc = sample_rpc(0.04);
    Rng rng(2);
    for (int t = 0; t < 50; ++t) {
        const Vec3<double> x(rng.uniform(0, 32), rng.uniform(0, 32), rng.uniform(-8, 56));
        const auto e = rpc_project(rpc, x);
        for (int a = 0; a < 3; ++a) {
            Vec3<double> xp = x, xm = x;
            xp[a] += 1e-5;
            xm[a] -= 1e-5;
            const Vec2<double> fd = (rpc_project(rpc, xp, "v", false).pixel - rpc_project(rpc, xm, "v", false).pixel) / 2e-5;
            CHECK((fd - e.jacobian.col(a)).norm() <= 1e-6 * (1.0 + fd.norm()));
        }
    }
}

TEST_CASE("monomial derivatives match finite differences") {
    const double l = 0.3, p = -0.7, h = 0.45;
    double m[20], dl[20], dp[20], dh[20];
    rpc_monomials(l, p, h, m, dl, dp, dh);
    double mp[20], mm[20];
    const double eps = 1e-6;
    rpc_monomials(l + eps, p, h, mp);
    rpc_monomials(l - eps, p, h, mm);
    for (int k = 0; k < 20; ++k) CHECK(std::abs((mp[k] - mm[k]) / (2 * eps) - dl[k]) <= 1e-8);
    rpc_monomials(l, p + eps, h, mp);
    rpc_monomials(l, p - eps, h, mm);
    for (int k = 0; k < 20; ++k) CHECK(std::abs((mp[k] - mm[k]) / (2 * eps) - dp[k]) <= 1e-8);
    rpc_monomials(l, p, h + eps, mp);
    rpc_monomials(l, p, h - eps, mm);
    for (int k = 0; k < 20; ++k) CHECK(std::abs((mp[k] - mm[k]) / (2 * eps) - dh[k]) <= 1e-8);
    CHECK(m[10] == doctest::Approx(l * p * h));
    CHECK(m[19] == doctest::Approx(h * h * h));
}

TEST_CASE("write then parse round-trips bitwise") {
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
        const RpcMetadata r = random_rpc(rng);
        const RpcMetadata back = parse_rpc(write_rpc(r));
        CHECK(back == r);
        CHECK(write_rpc(back) == write_rpc(r));
    }
}

TEST_CASE("parser accepts comments, blank lines, units and a leading plus") {
    std::string text = "# header\n\n" + write_rpc(sample_rpc());
    const auto pos = text.find("LINE_OFF: ");
    text.insert(pos + 10, "+");
    const RpcMetadata r = parse_rpc(text);
    CHECK(r == sample_rpc());
}

TEST_CASE("parse errors report line and column") {
    const std::string good = write_rpc(sample_rpc());
    SUBCASE("unknown key") {
        try {
            parse_rpc("BOGUS: 1\n" + good);
            FAIL("expected RpcParseError");
        } catch (const RpcParseError &e) {
            CHECK(e.line() == 1);
            CHECK(e.column() == 1);
        }
    }
    SUBCASE("malformed number") {
        try {
            parse_rpc("#\n  LINE_OFF: 1.2.3\n" + good);
            FAIL("expected RpcParseError");
        } catch (const RpcParseError &e) {
            CHECK(e.line() == 2);
            CHECK(e.column() == 13);
        }
    }
    SUBCASE("missing colon") {
        CHECK_THROWS_AS(parse_rpc("LINE_OFF 3\n"), RpcParseError);
    }
    SUBCASE("duplicate key") {
        CHECK_THROWS_AS(parse_rpc(good + "LINE_OFF: 3\n"), RpcParseError);
    }
    SUBCASE("missing key") {
        const auto cut = good.find("SAMP_DEN_COEFF_20");
        CHECK_THROWS_AS(parse_rpc(good.substr(0, cut)), RpcParseError);
    }
    SUBCASE("trailing text") {
        std::string t = good;
        t.insert(t.find('\n'), " pixels extra");
        CHECK_THROWS_AS(parse_rpc(t), RpcParseError);
    }
}

TEST_CASE("validation rejects bad denominators and scales") {
    RpcMetadata r = sample_rpc();
    CHECK_NOTHROW(validate_rpc(r));
    RpcMetadata den = r;
    den.line_den[0] = 2.0;
    CHECK_THROWS_AS(validate_rpc(den), std::invalid_argument);
    RpcMetadata scale = r;
    scale.height_scale = 0.0;
    CHECK_THROWS_AS(validate_rpc(scale), std::invalid_argument);
    CHECK_THROWS_AS(parse_rpc(write_rpc(scale)), RpcParseError);
}

TEST_CASE("a vanishing denominator is reported with the view name") {
    RpcMetadata r = sample_rpc();
    r.line_den[0] = 1.0;
    r.line_den[1] = -1.0;
    // L = 1 at x = long_off + long_scale makes the line denominator zero.
    try {
        rpc_project(r, Vec3<double>(32, 16, 24), "left");
        FAIL("expected DegenerateProjection");
    } catch (const DegenerateProjection &e) {
        CHECK(std::string(e.what()).find("left") != std::string::npos);
    }
}

TEST_CASE("perturbation keeps denominator constants and scales with sigma") {
    const RpcMetadata r = sample_rpc(0.03);
    Rng a(4), b(4);
    CHECK(perturb_rpc(r, 0.0, a) == r);
    const RpcMetadata p = perturb_rpc(r, 0.05, b);
    CHECK(p.line_den[0] == 1.0);
    CHECK(p.samp_den[0] == 1.0);
    // Noise is relative: zero coefficients stay zero, the others move.
    int moved = 0;
    for (int k = 0; k < 20; ++k) {
        if (r.line_num[k] == 0.0) CHECK(p.line_num[k] == 0.0);
        else moved += p.line_num[k] != r.line_num[k];
    }
    CHECK(moved > 0);

    // Mean pixel displacement grows with sigma.
    double prev = 0.0;
    for (double sigma : {0.01, 0.05, 0.2}) {
        Rng rng(5);
        double acc = 0.0;
        for (int t = 0; t < 20; ++t) {
            const RpcMetadata q = perturb_rpc(r, sigma, rng);
            acc += (rpc_project(q, Vec3<double>(10, 20, 5), "v", false).pixel -
                    rpc_project(r, Vec3<double>(10, 20, 5), "v", false).pixel)
                       .norm();
        }
        CHECK(acc > prev);
        prev = acc;
    }
}

}  // TEST_SUITE
