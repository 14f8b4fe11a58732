// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "swiftgs/routing.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace swiftgs;

namespace {

std::vector<VecX<double>> random_sites(Rng &rng, int n, int dim) {
    std::vector<VecX<double>> out;
    for (int i = 0; i < n; ++i) {
        VecX<double> h(dim);
        for (int d = 0; d < dim; ++d) h[d] = rng.normal();
        out.push_back(h);
    }
    return out;
}

std::vector<TaskHead<double>> random_heads(Rng &rng, int j, int dim) {
    std::vector<TaskHead<double>> heads;
    for (int k = 0; k < j; ++k) {
        auto h = make_head(dim, 8, static_cast<HeadRole>(k % 4));
        h.inner.init_uniform(rng);
        h.outer.init_uniform(rng);
        heads.push_back(h);
    }
    return heads;
}

}  // namespace

TEST_SUITE("routing") {

TEST_CASE("a single head is always selected with probability one") {
    Rng rng(1);
    Router<double> r = make_router(6, 1, 1, 1.0);
    r.proj.init_uniform(rng);
    const auto sites = random_sites(rng, 10, 6);
    const auto heads = random_heads(rng, 1, 6);
    const auto out = route_and_apply<double>(sites, r, heads);
    for (std::size_t i = 0; i < sites.size(); ++i) {
        CHECK(out.selected[i] == std::vector<int>{0});
        CHECK(softmax(out.logits[i], 1.0)[0] == 1.0);
    }
    CHECK(out.stats.load[0] == 1.0);
}

TEST_CASE("zero-weight heads leave the features unchanged") {
    Rng rng(2);
    Router<double> r = make_router(5, 4, 2, 1.0);
    r.proj.init_uniform(rng);
    std::vector<TaskHead<double>> heads;
    for (int k = 0; k < 4; ++k) heads.push_back(make_head(5, 8, static_cast<HeadRole>(k)));
    const auto sites = random_sites(rng, 7, 5);
    const auto out = route_and_apply<double>(sites, r, heads);
    for (std::size_t i = 0; i < sites.size(); ++i) CHECK((out.fused[i] - sites[i]).norm() == 0.0);
}

TEST_CASE("top-2 selection matches a full sort") {
    Rng rng(3);
    Router<double> r = make_router(6, 4, 2, 0.7);
    r.proj.init_uniform(rng, 3.0);
    const auto sites = random_sites(rng, 200, 6);
    const auto out = route_and_apply<double>(sites, r, random_heads(rng, 4, 6));
    std::vector<std::size_t> counts(4, 0);
    for (std::size_t i = 0; i < sites.size(); ++i) {
        const VecX<double> g = r.proj(sites[i]);
        std::vector<int> idx{0, 1, 2, 3};
        std::sort(idx.begin(), idx.end(), [&](int a, int b) { return g[a] > g[b] || (g[a] == g[b] && a < b); });
        CHECK(out.selected[i] == std::vector<int>{idx[0], idx[1]});
        ++counts[idx[0]];
        ++counts[idx[1]];
    }
    double sum = 0.0;
    for (int j = 0; j < 4; ++j) {
        CHECK(out.stats.counts[j] == counts[j]);
        sum += out.stats.load[j];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
    double isum = 0.0;
    for (double x : out.stats.importance) isum += x;
    CHECK(std::abs(isum - 1.0) <= 1e-12);
}

TEST_CASE("softmax sums to one and ignores a common shift") {
    Rng rng(4);
    for (int t = 0; t < 100; ++t) {
        VecX<double> g(5);
        for (int j = 0; j < 5; ++j) g[j] = rng.uniform(-8, 8);
        const VecX<double> p = softmax(g, 1.3);
        CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
        const VecX<double> q = softmax(VecX<double>(g.array() + rng.uniform(-50, 50)), 1.3);
        CHECK((p - q).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("load loss is the variance of the loads") {
    const std::vector<double> uniform{0.25, 0.25, 0.25, 0.25};
    CHECK(load_loss<double>(uniform) == 0.0);
    const std::vector<double> skew{0.5, 0.5, 0.0, 0.0};
    CHECK(load_loss<double>(skew) == doctest::Approx(0.0625).epsilon(1e-15));
}

TEST_CASE("z-loss examples") {
    const double beta = 0.01;
    CHECK(z_loss<double>({VecX<double>::Zero(4)}, beta) == doctest::Approx(beta * std::pow(std::log(4.0), 2)).epsilon(1e-14));
    VecX<double> row(4);
    row << std::log(3.0), -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
        -std::numeric_limits<double>::infinity();
    CHECK(z_loss<double>({row}, beta) == doctest::Approx(beta * std::pow(std::log(3.0), 2)).epsilon(1e-14));

    Rng rng(5);
    std::vector<VecX<double>> rows;
    double acc = 0.0;
    for (int i = 0; i < 9; ++i) {
        VecX<double> g(4);
        double s = 0.0;
        for (int j = 0; j < 4; ++j) {
            g[j] = rng.uniform(-3, 3);
            s += std::exp(g[j]);
        }
        acc += std::log(s) * std::log(s);
        rows.push_back(g);
    }
    CHECK(z_loss<double>(rows, beta) == doctest::Approx(beta * acc / 9).epsilon(1e-13));
    CHECK_THROWS_AS(z_loss<double>(rows, 0.0), std::invalid_argument);
}

TEST_CASE("zero logits satisfy both bounds with slack") {
    const MatX<double> g = MatX<double>::Zero(3, 4);
    const double beta = 0.01, bz = 0.1;
    const auto rep = check_router_bounds(g, beta, 1.0, bz);
    CHECK(rep.precondition);
    CHECK(rep.symmetric_precondition);
    CHECK(rep.abs_slack > 0.0);
    CHECK(rep.prob_slack > 0.0);
}

TEST_CASE("the single-site boundary construction is tight") {
    const double beta = 0.02, bz = 0.5, tau = 1.0;
    const double gmax = std::sqrt(bz / beta);
    MatX<double> g(1, 1);
    g(0, 0) = gmax;
    const auto rep = check_router_bounds(g, beta, tau, bz);
    CHECK(std::abs(rep.g_max - rep.max_abs_logit) <= 1e-9);
    CHECK(std::abs(rep.z_loss - bz) <= 1e-9);
}

TEST_CASE("routing gradients match finite differences") {
    Rng rng(6);
    Router<double> r = make_router(4, 3, 2, 1.0);
    r.proj.init_uniform(rng, 2.0);
    auto heads = random_heads(rng, 3, 4);
    const auto sites = random_sites(rng, 5, 4);
    std::vector<double> flat;
    Dense<double>::visit_named(r.proj, "p", [&](const std::string &, const double *d, std::size_t n) {
        flat.insert(flat.end(), d, d + n);
    });
    const std::size_t nr = flat.size();
    for (auto &h : heads)
        TaskHead<double>::visit_named(h, "h", [&](const std::string &, const double *d, std::size_t n) {
            flat.insert(flat.end(), d, d + n);
        });
    const auto f = [&](auto p) {
        using T = std::remove_cvref_t<decltype(p[0])>;
        Router<T> tr = r.template cast<T>();
        std::vector<TaskHead<T>> th;
        for (const auto &h : heads) th.push_back(h.template cast<T>());
        std::size_t cur = 0;
        auto fill = [&](const std::string &, T *d, std::size_t n) {
            for (std::size_t k = 0; k < n; ++k) d[k] = p[cur++];
        };
        Dense<T>::visit_named(tr.proj, "p", fill);
        for (auto &h : th) TaskHead<T>::visit_named(h, "h", fill);
        std::vector<VecX<T>> ts;
        for (const auto &s : sites) ts.push_back(s.template cast<T>());
        const auto out = route_and_apply<T>(ts, tr, th);
        T acc(0);
        for (const auto &y : out.fused)
            for (Eigen::Index d = 0; d < y.size(); ++d) acc += y[d] * T(0.1 * (d + 1));
        std::vector<T> imp(out.importance.data(), out.importance.data() + out.importance.size());
        return acc + load_loss<T>(imp) + z_loss<T>(out.logits, 0.01);
    };
    const auto rep = check_grad(f, std::span<const double>(flat), 1e-5);
    CHECK(rep.max_rel_error <= 1e-4);
    CHECK(nr == 15);
}

}  // TEST_SUITE
