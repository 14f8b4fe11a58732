// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "swiftgs/objectives.hpp"

#include <doctest.h>

#include <cmath>

using namespace swiftgs;

namespace {

std::vector<double> random_vec(Rng &rng, std::size_t n, double lo = 0.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto &x : v) x = rng.uniform(lo, hi);
    return v;
}

}  // namespace

TEST_SUITE("objectives") {

TEST_CASE("photo loss examples") {
    Rng rng(1);
    const auto a = random_vec(rng, 48);
    CHECK(photo_loss<double>(a, a) == 0.0);
    std::vector<double> b(a);
    for (auto &x : b) x += 0.25;
    CHECK(photo_loss<double>(b, a) == doctest::Approx(0.25).epsilon(1e-14));
    const auto c = random_vec(rng, 48);
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += std::abs(a[k] - c[k]);
    CHECK(photo_loss<double>(a, c) == doctest::Approx(acc / 48).epsilon(1e-14));
    CHECK_THROWS_AS(photo_loss<double>(a, std::vector<double>(3)), std::invalid_argument);
}

TEST_CASE("perceptual proxy examples") {
    Rng rng(2);
    const int h = 8, w = 12, c = 3;
    const auto a = random_vec(rng, h * w * c);
    CHECK(perceptual_proxy<double>(a, a, h, w, c) == 0.0);
    std::vector<double> shifted(a);
    for (auto &x : shifted) x += 0.3;
    CHECK(perceptual_proxy<double>(shifted, a, h, w, c) == doctest::Approx(0.3).epsilon(1e-13));

    // Pyramid oracle: explicit 2x2 averaging at each level.
    const auto b = random_vec(rng, h * w * c);
    std::vector<double> d(a.size());
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = a[k] - b[k];
    double total = 0.0;
    int hh = h, ww = w;
    for (int level = 0; level < 3; ++level) {
        double acc = 0.0;
        for (double x : d) acc += std::abs(x);
        total += acc / static_cast<double>(d.size());
        std::vector<double> nd(static_cast<std::size_t>(hh / 2) * (ww / 2) * c);
        for (int r = 0; r < hh / 2; ++r)
            for (int q = 0; q < ww / 2; ++q)
                for (int ch = 0; ch < c; ++ch) {
                    double s = 0.0;
                    for (int dr = 0; dr < 2; ++dr)
                        for (int dq = 0; dq < 2; ++dq) s += d[((2 * r + dr) * ww + 2 * q + dq) * c + ch];
                    nd[(static_cast<std::size_t>(r) * (ww / 2) + q) * c + ch] = s / 4;
                }
        d = nd;
        hh /= 2;
        ww /= 2;
    }
    CHECK(perceptual_proxy<double>(a, b, h, w, c) == doctest::Approx(total / 3).epsilon(1e-12));
    CHECK_THROWS_AS(perceptual_proxy<double>(std::vector<double>(12), std::vector<double>(12), 2, 2, 3),
                    std::invalid_argument);
}

TEST_CASE("reprojection loss examples") {
    Rng rng(3);
    const auto e = random_vec(rng, 10, 0, 30);
    CHECK(reproj_loss<double>({e, e, e}) == 0.0);
    std::vector<double> up(e);
    for (auto &x : up) x += 2.0;
    CHECK(reproj_loss<double>({e, up}) == doctest::Approx(2.0).epsilon(1e-14));
    const std::vector<std::vector<double>> f{random_vec(rng, 10, 0, 30), random_vec(rng, 10, 0, 30),
                                             random_vec(rng, 10, 0, 30)};
    double acc = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j)
            for (int m = 0; m < 10; ++m) acc += std::abs(f[i][m] - f[j][m]);
    CHECK(reproj_loss<double>(f) == doctest::Approx(acc / 30).epsilon(1e-14));
    bool single = false;
    CHECK(reproj_loss<double>({e}, &single) == 0.0);
    CHECK(single);
}

TEST_CASE("dsm loss is a masked mean and rejects an empty mask") {
    const std::vector<double> pred{1, 2, 3, 4}, ref{1, 0, 3, 10};
    const std::vector<std::uint8_t> mask{1, 1, 0, 1};
    CHECK(dsm_loss<double>(pred, ref, mask) == doctest::Approx((0 + 2 + 6) / 3.0).epsilon(1e-15));
    CHECK_THROWS_AS(dsm_loss<double>(pred, ref, std::vector<std::uint8_t>(4, 0)), std::invalid_argument);
}

TEST_CASE("distillation loss examples") {
    Rng rng(4);
    const auto e = random_vec(rng, 20, 0, 30);
    const auto d = random_vec(rng, 20, 0, 30);
    CHECK(distill_loss<double>(e, d, std::vector<double>(20, 0.0)) == 0.0);
    std::vector<double> off(e);
    for (auto &x : off) x += 0.5;
    CHECK(distill_loss<double>(off, e, std::vector<double>(20, 1.0)) == doctest::Approx(0.5).epsilon(1e-14));
    const auto w = random_vec(rng, 20);
    double acc = 0.0;
    for (int k = 0; k < 20; ++k) acc += w[k] * std::abs(e[k] - d[k]);
    CHECK(distill_loss<double>(e, d, w) == doctest::Approx(acc / 20).epsilon(1e-14));
    CHECK(distill_loss<double>(e, d, w, false) == doctest::Approx(acc).epsilon(1e-14));
}

TEST_CASE("distillation gradient with respect to slot centers matches finite differences") {
    // Elevation is an opacity-weighted blend of center altitudes; teacher values are constants.
    Rng rng(5);
    std::vector<double> centers(6);
    for (auto &c : centers) c = rng.uniform(0, 20);
    const auto teacher = random_vec(rng, 4, 0, 20);
    const auto conf = random_vec(rng, 4);
    std::vector<std::vector<double>> weights(4, std::vector<double>(6));
    for (auto &row : weights)
        for (auto &x : row) x = rng.uniform(0, 0.3);
    const auto f = [&](auto p) {
        using T = std::remove_cvref_t<decltype(p[0])>;
        std::vector<T> e(4, T(0));
        for (int u = 0; u < 4; ++u)
            for (int k = 0; k < 6; ++k) e[u] += T(weights[u][k]) * p[k];
        return distill_loss<T>(e, teacher, conf);
    };
    const auto rep = check_grad(f, std::span<const double>(centers));
    CHECK(rep.max_rel_error <= 1e-6);
}

TEST_CASE("sdf loss examples") {
    // An exact plane distance in normalized units has unit gradient.
    const SdfField<double> plane = make_plane_sdf(3, 4, 1, 0, 0.0);
    Rng rng(6);
    std::vector<Vec3<double>> pts;
    for (int k = 0; k < 16; ++k) pts.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const std::vector<Vec3<double>> on_plane{{0.1, 0.2, 0.0}, {-0.5, 0.3, 0.0}};
    const auto parts = sdf_loss_parts<double>(plane, pts, on_plane);
    CHECK(parts.eikonal <= 1e-20);
    CHECK(parts.anchor <= 1e-12);

    SdfField<double> net = make_sdf(3, 6, 1, 0);
    init_sdf(net, rng);
    const std::vector<Vec3<double>> centers{{0.2, -0.1, 0.3}, {0.0, 0.4, -0.2}};
    double eik = 0.0;
    for (const auto &x : pts) {
        Vec3<double> g;
        for (int a = 0; a < 3; ++a) {
            Vec3<double> xp = x, xm = x;
            xp[a] += 1e-6;
            xm[a] -= 1e-6;
            g[a] = (eval_sdf(net, xp) - eval_sdf(net, xm)) / 2e-6;
        }
        eik += (g.norm() - 1) * (g.norm() - 1);
    }
    const double anchor = (std::abs(eval_sdf(net, centers[0])) + std::abs(eval_sdf(net, centers[1]))) / 2;
    CHECK(sdf_loss<double>(net, pts, centers) == doctest::Approx(eik / 16 + anchor).epsilon(1e-7));
    CHECK_THROWS_AS(sdf_loss<double>(net, {}, centers), std::invalid_argument);
}

TEST_CASE("sparsity averages opacity over the capacity") {
    SlotSet<double> s(4);
    GaussianPrimitive<double> p;
    p.opacity_logit = 0.0;
    s.insert(p);
    s.insert(p);
    CHECK(sparsity(s) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(sparsity(SlotSet<double>(0)) == 0.0);
}

TEST_CASE("total loss examples") {
    LossTerms<double> zero;
    CHECK(total_loss(zero, LossWeights{}) == 0.0);
    LossTerms<double> photo;
    photo.photo = 2.0;
    CHECK(total_loss(photo, LossWeights{}) == 2.0);

    Rng rng(7);
    LossTerms<double> t;
    double *fields[] = {&t.photo, &t.perceptual, &t.reproj, &t.dsm, &t.distill, &t.sdf, &t.load, &t.z, &t.sparse};
    for (double *f : fields) *f = rng.uniform(0, 3);
    LossWeights w;
    double *weights[] = {&w.lpips, &w.reproj, &w.dsm, &w.distill, &w.sdf, &w.load, &w.z, &w.sparse};
    for (double *x : weights) *x = rng.uniform(0, 2);
    const double dot = t.photo + w.lpips * t.perceptual + w.reproj * t.reproj + w.dsm * t.dsm +
                       w.distill * t.distill + w.sdf * t.sdf + w.load * t.load + w.z * t.z + w.sparse * t.sparse;
    CHECK(total_loss(t, w) == doctest::Approx(dot).epsilon(1e-14));

    // Affine in each weight with slope equal to its term.
    for (std::size_t k = 0; k < 8; ++k) {
        LossWeights w0 = w, w1 = w;
        double *p0[] = {&w0.lpips, &w0.reproj, &w0.dsm, &w0.distill, &w0.sdf, &w0.load, &w0.z, &w0.sparse};
        double *p1[] = {&w1.lpips, &w1.reproj, &w1.dsm, &w1.distill, &w1.sdf, &w1.load, &w1.z, &w1.sparse};
        *p0[k] = 0.5;
        *p1[k] = 1.5;
        CHECK(total_loss(t, w1) - total_loss(t, w0) == doctest::Approx(*fields[k + 1]).epsilon(1e-12));
    }

    LossTerms<double> bad;
    bad.dsm = std::nan("");
    CHECK_THROWS_AS(total_loss(bad, LossWeights{}), NonFiniteLoss);
    LossWeights neg;
    neg.dsm = -1.0;
    CHECK_THROWS_AS(neg.validate(), std::invalid_argument);
}

TEST_CASE("every loss is nonnegative on random inputs") {
    Rng rng(8);
    for (int t = 0; t < 50; ++t) {
        const auto a = random_vec(rng, 64, -1, 1), b = random_vec(rng, 64, -1, 1);
        CHECK(photo_loss<double>(a, b) >= 0.0);
        CHECK(perceptual_proxy<double>(a, b, 8, 8, 1) >= 0.0);
        CHECK(reproj_loss<double>({a, b}) >= 0.0);
        CHECK(distill_loss<double>(a, b, random_vec(rng, 64)) >= 0.0);
    }
}

}  // TEST_SUITE
