// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "swiftgs/meta.hpp"

#include <doctest.h>

#include <cmath>

using namespace swiftgs;

namespace {

EpisodeConfig tiny_episodes() {
    EpisodeConfig c;
    c.grid = 16;
    c.extent = 64.0;
    c.image_size = 16;
    return c;
}

ModelConfig tiny_model() {
    ModelConfig m;
    m.slot_grid = 4;
    m.head_width = 8;
    m.pooled_size = 8;
    return m;
}

const std::vector<Episode> &tiny_dataset() {
    static const std::vector<Episode> ds = make_dataset(31, 8, tiny_episodes());
    return ds;
}

TrainConfig tiny_train() {
    TrainConfig t;
    t.batch = 2;
    t.iterations = 2;
    t.optimizer = "adamw";
    t.outer_lr = 3e-3;
    t.sample.pixels_per_view = 8;
    t.sample.dsm_cells = 8;
    t.render.march_steps = 8;
    return t;
}

}  // namespace

TEST_SUITE("meta") {

TEST_CASE("scene encoding ignores view order and duplicates") {
    const Episode &ep = tiny_dataset()[0];
    const auto p = init_shared(tiny_model(), 2);
    const EpisodeCache cache = make_cache(ep, p.config);
    const VecX<double> z01 = encode_scene(cache, {0, 1}, p.encoder);
    CHECK(encode_scene(cache, {1, 0}, p.encoder) == z01);
    CHECK(encode_scene(cache, {0, 1, 1, 0}, p.encoder) == z01);
    CHECK(encode_scene(cache, {0, 2}, p.encoder) != z01);
    CHECK_THROWS_AS(encode_scene(cache, {}, p.encoder), std::invalid_argument);
}

TEST_CASE("prediction is deterministic and sized by the model") {
    const Episode &ep = tiny_dataset()[1];
    const auto p = init_shared(tiny_model(), 3);
    const EpisodeCache cache = make_cache(ep, p.config);
    const auto a = predict(cache, p, Calibration<double>::identity());
    const auto b = predict(cache, p, Calibration<double>::identity());
    CHECK(a.slots.capacity() == 16);
    CHECK(a.z == b.z);
    for (std::size_t k = 0; k < a.slots.capacity(); ++k) {
        if (!a.slots.active[k]) continue;
        CHECK(a.slots.slots[k].center == b.slots.slots[k].center);
        CHECK(std::isfinite(a.slots.slots[k].center[2]));
    }
    CHECK(init_shared(tiny_model(), 3).decoder.hidden.weight == p.decoder.hidden.weight);
    CHECK(param_checksum(init_shared(tiny_model(), 4)) != param_checksum(p));
}

TEST_CASE("a delta correction moves the slots and the identity does not") {
    const Episode &ep = tiny_dataset()[2];
    const auto p = init_shared(tiny_model(), 5);
    const EpisodeCache cache = make_cache(ep, p.config);
    Calibration<double> theta = Calibration<double>::identity();
    const auto base = predict(cache, p, theta);
    theta.delta[kDecoderHidden + 2] = 0.5;
    const auto moved = predict(cache, p, theta);
    bool differs = false;
    for (std::size_t k = 0; k < base.slots.capacity(); ++k) differs |= base.slots.slots[k].center != moved.slots.slots[k].center;
    CHECK(differs);
}

TEST_CASE("samples are deterministic and stay inside the split") {
    const Episode &ep = tiny_dataset()[0];
    SampleConfig sc;
    Rng a(9), b(9);
    const SplitSample s = draw_sample(ep, ep.support, sc, a, true);
    const SplitSample t = draw_sample(ep, ep.support, sc, b, true);
    CHECK(s.views == ep.support);
    CHECK(s.pixels == t.pixels);
    CHECK(s.dsm_cells == t.dsm_cells);
    for (const auto &view : s.pixels) {
        CHECK(view.size() == 16);
        for (const auto &px : view) CHECK((px[0] >= 0 && px[0] < 16 && px[1] >= 0 && px[1] < 16));
    }
    Rng c(9);
    CHECK(draw_sample(ep, ep.support, sc, c, false).dsm_cells.empty());
}

TEST_CASE("zero inner steps return theta0 bitwise") {
    const Episode &ep = tiny_dataset()[3];
    const auto p = init_shared(tiny_model(), 6);
    const EpisodeCache cache = make_cache(ep, p.config);
    Rng rng(1);
    const SplitSample s = draw_sample(ep, ep.support, SampleConfig{}, rng, false);
    Calibration<double> theta0 = Calibration<double>::identity();
    theta0.a[1] = 0.02;
    InnerConfig ic;
    ic.steps = 0;
    const InnerResult r = inner_calibrate(cache, p, theta0, s, LossWeights{}, tiny_train().render, ic);
    CHECK(!r.aborted);
    CHECK(r.theta.A == theta0.A);
    CHECK(r.theta.a == theta0.a);
    CHECK(r.theta.delta == theta0.delta);
    CHECK(r.support_loss.empty());
}

TEST_CASE("projected descent on a quadratic contracts geometrically") {
    Calibration<double> target = Calibration<double>::identity();
    Rng rng(2);
    for (Eigen::Index k = 0; k < target.delta.size(); ++k) target.delta[k] = rng.uniform(-0.5, 0.5);
    target.tau = 1.1;
    const auto loss = [&](const Calibration<Var> &t) {
        Var acc(0.0);
        for (Eigen::Index k = 0; k < t.delta.size(); ++k) acc = acc + 0.5 * (t.delta[k] - target.delta[k]) * (t.delta[k] - target.delta[k]);
        return acc + 0.5 * (t.tau - target.tau) * (t.tau - target.tau);
    };
    const Calibration<double> theta0 = Calibration<double>::identity();
    const double e0 = std::sqrt((theta0.delta - target.delta).squaredNorm() + std::pow(theta0.tau - target.tau, 2));
    for (int steps : {1, 3, 10}) {
        InnerConfig ic;
        ic.steps = steps;
        ic.lr = 0.1;
        const InnerResult r = inner_descent(loss, theta0, ic);
        const double e = std::sqrt((r.theta.delta - target.delta).squaredNorm() + std::pow(r.theta.tau - target.tau, 2));
        CHECK(e == doctest::Approx(std::pow(0.9, steps) * e0).epsilon(1e-10));
        CHECK(within_box(r.theta, ic.box));
    }
    InnerConfig bad;
    bad.lr = 0.0;
    CHECK_THROWS_AS(inner_descent(loss, theta0, bad), std::invalid_argument);
}

TEST_CASE("inner steps stay inside the calibration box") {
    Calibration<double> far = Calibration<double>::identity();
    far.delta.setConstant(50.0);
    far.tau = 40.0;
    const auto loss = [&](const Calibration<Var> &t) {
        Var acc(0.0);
        for (Eigen::Index k = 0; k < t.delta.size(); ++k) acc = acc + (t.delta[k] - far.delta[k]) * (t.delta[k] - far.delta[k]);
        return acc + (t.tau - far.tau) * (t.tau - far.tau);
    };
    InnerConfig ic;
    ic.steps = 5;
    ic.lr = 10.0;
    const InnerResult r = inner_descent(loss, Calibration<double>::identity(), ic);
    CHECK(within_box(r.theta, ic.box));
}

TEST_CASE("calibration lowers the support loss on most episodes") {
    const auto p = init_shared(tiny_model(), 7);
    const TrainConfig tc = tiny_train();
    int improved = 0;
    const auto &ds = tiny_dataset();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const EpisodeCache cache = make_cache(ds[i], p.config);
        Rng rng(100 + i);
        const SplitSample s = draw_sample(ds[i], ds[i].support, tc.sample, rng, false);
        InnerConfig ic;
        ic.steps = 3;
        ic.measure_final = true;
        const InnerResult r = inner_calibrate(cache, p, Calibration<double>::identity(), s, tc.weights, tc.render, ic);
        REQUIRE(!r.aborted);
        REQUIRE(r.support_loss.size() == 4);
        improved += r.support_loss.back() <= r.support_loss.front();
    }
    CHECK(improved >= 7);
}

TEST_CASE("the support loss never reads the reference DSM") {
    Episode ep = tiny_dataset()[4];
    const auto p = init_shared(tiny_model(), 8);
    Rng rng(3);
    const TrainConfig tc = tiny_train();
    const SplitSample s = draw_sample(ep, ep.support, tc.sample, rng, false);
    const EpisodeCache c1 = make_cache(ep, p.config);
    const double with_ref = split_loss(c1, p, Calibration<double>::identity(), s, tc.weights, false, tc.render).total;
    for (auto &x : ep.dsm->data) x += 100.0;
    const EpisodeCache c2 = make_cache(ep, p.config);
    CHECK(split_loss(c2, p, Calibration<double>::identity(), s, tc.weights, false, tc.render).total == with_ref);
    ep.dsm.reset();
    ep.dsm_mask.reset();
    const EpisodeCache c3 = make_cache(ep, p.config);
    CHECK(split_loss(c3, p, Calibration<double>::identity(), s, tc.weights, false, tc.render).total == with_ref);

    InnerConfig ic;
    ic.steps = 2;
    const auto out = calibrate_and_infer(ep, p, ic, tc.weights, tc.sample, 1, tc.render, 1, false);
    for (double e : out.dsm.elevation) CHECK(std::isfinite(e));
}

TEST_CASE("inference leaves shared parameters untouched and S = 0 equals zero-shot") {
    const Episode &ep = tiny_dataset()[5];
    const auto p = init_shared(tiny_model(), 9);
    const std::uint64_t before = param_checksum(p);
    const TrainConfig tc = tiny_train();
    const auto zs = zero_shot_infer(ep, p, tc.render, 1, true);
    InnerConfig ic;
    ic.steps = 0;
    const auto s0 = calibrate_and_infer(ep, p, ic, tc.weights, tc.sample, 4, tc.render, 1, true);
    CHECK(zs.dsm.elevation == s0.dsm.elevation);
    REQUIRE(zs.views.size() == ep.views.size());
    CHECK(zs.views[0].rgb == s0.views[0].rgb);
    ic.steps = 3;
    const auto s3 = calibrate_and_infer(ep, p, ic, tc.weights, tc.sample, 4, tc.render, 1, false);
    CHECK(s3.views.empty());
    CHECK(param_checksum(p) == before);
    const auto threaded = zero_shot_infer(ep, p, tc.render, 3, false);
    CHECK(threaded.dsm.elevation == zs.dsm.elevation);
}

TEST_CASE("shared gradient is finite and reaches the decoder") {
    const Episode &ep = tiny_dataset()[6];
    const auto p = init_shared(tiny_model(), 10);
    const EpisodeCache cache = make_cache(ep, p.config);
    Rng rng(4);
    const TrainConfig tc = tiny_train();
    const SplitSample s = draw_sample(ep, ep.query, tc.sample, rng, true);
    const GradientStats g = shared_gradient(cache, p, Calibration<double>::identity(), s, tc.weights, true, tc.render);
    REQUIRE(g.gradient.size() == param_count(p));
    double norm = 0.0;
    for (double x : g.gradient) {
        CHECK(std::isfinite(x));
        norm += x * x;
    }
    CHECK(norm > 0.0);
    const ParamVector flat = flatten(p);
    const auto &blk = flat.block("decoder.base");
    double base = 0.0;
    for (std::size_t k = 0; k < blk.size; ++k) base += std::abs(g.gradient[blk.offset + k]);
    CHECK(base > 0.0);
}

TEST_CASE("meta-training is deterministic across runs and thread counts") {
    const auto init = init_shared(tiny_model(), 11);
    TrainConfig tc = tiny_train();
    const TrainResult a = meta_train(tiny_dataset(), tc, init);
    const TrainResult b = meta_train(tiny_dataset(), tc, init);
    tc.threads = 3;
    const TrainResult c = meta_train(tiny_dataset(), tc, init);
    CHECK(!a.diverged);
    REQUIRE(a.log.size() == 2);
    CHECK(format_train_log(a.log) == format_train_log(b.log));
    CHECK(format_train_log(a.log) == format_train_log(c.log));
    CHECK(param_checksum(a.params) == param_checksum(b.params));
    CHECK(param_checksum(a.params) == param_checksum(c.params));
    CHECK(param_checksum(a.params) != param_checksum(init));
    CHECK(format_train_log(a.log).rfind("iter,query_loss,dsm_mae,shadow_loss,load_var\n", 0) == 0);

    int calls = 0;
    tc.threads = 1;
    meta_train(tiny_dataset(), tc, init, [&](const TrainLogRow &row, const SharedParams<double> &) {
        CHECK(row.iter == calls);
        ++calls;
    });
    CHECK(calls == 2);
}

TEST_CASE("training configuration is validated") {
    TrainConfig tc = tiny_train();
    tc.batch = 0;
    CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
    tc = tiny_train();
    tc.optimizer = "lbfgs";
    CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
    tc = tiny_train();
    tc.threads = 0;
    CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
    ModelConfig mc = tiny_model();
    mc.top_k = 9;
    CHECK_THROWS(mc.validate());
}

}  // TEST_SUITE
