// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "swiftgs/verify.hpp"

#include "swiftgs/meta.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <cstdio>
#include <sstream>

namespace swiftgs {

// ---------------------------------------------------------------------------
// Taylor remainder of a quadratic height function under a Gaussian

namespace {

Mat2<double> rotation2(double phi) {
    Mat2<double> r;
    r << std::cos(phi), -std::sin(phi), std::sin(phi), std::cos(phi);
    return r;
}

// Mean |h(x) - h(0) - grad h(0) . x| over x ~ N(0, sigma).
double mean_remainder(const Mat2<double> &hess, const Vec2<double> &grad0, double h0, const Mat2<double> &sigma,
                      int samples, Rng &rng) {
    const Mat2<double> l = sigma.llt().matrixL();
    auto h = [&](const Vec2<double> &x) { return h0 + grad0.dot(x) + 0.5 * x.dot(hess * x); };
    double acc = 0.0;
    for (int s = 0; s < samples; ++s) {
        const Vec2<double> n(rng.normal(), rng.normal());
        const Vec2<double> x = l * n;
        acc += std::abs(h(x) - h0 - grad0.dot(x));
    }
    return acc / samples;
}

}  // namespace

GeometricBoundResult geometric_bound_check(std::uint64_t seed, int surfaces, int samples, double tolerance) {
    if (surfaces < 1 || samples < 1) throw std::invalid_argument("geometric_bound_check: counts must be positive");
    GeometricBoundResult r;
    r.surfaces = surfaces;
    r.samples = samples;
    Rng rng = Rng::derive(seed, 0x6e0);
    for (int s = 0; s < surfaces; ++s) {
        const double kappa = rng.uniform(0.01, 0.5);
        // One principal curvature sits at the bound, the other anywhere inside it.
        const double k1 = rng.uniform() < 0.5 ? kappa : -kappa;
        const double k2 = rng.uniform(-kappa, kappa);
        const Mat2<double> rot = rotation2(rng.uniform(0.0, M_PI));
        const Mat2<double> hess = rot * Vec2<double>(k1, k2).asDiagonal() * rot.transpose();
        const Vec2<double> grad0(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
        const double sigma2 = rng.uniform(1.0, 25.0);
        const double t = rng.uniform(0.05, 0.95);
        const Mat2<double> rs = rotation2(rng.uniform(0.0, M_PI));
        const Mat2<double> cov = rs * Vec2<double>(t * sigma2, (1.0 - t) * sigma2).asDiagonal() * rs.transpose();
        const double ratio = mean_remainder(hess, grad0, rng.uniform(-5.0, 5.0), cov, samples, rng) /
                             (0.5 * kappa * sigma2);
        r.worst_ratio = std::max(r.worst_ratio, ratio);
        if (ratio > 1.0 + tolerance) ++r.violations;
    }
    {
        const double kappa = rng.uniform(0.05, 0.5);
        const double sigma2 = rng.uniform(1.0, 25.0);
        const double mean = mean_remainder(kappa * Mat2<double>::Identity(), Vec2<double>::Zero(), 0.0,
                                           0.5 * sigma2 * Mat2<double>::Identity(), samples, rng);
        r.equality_rel_error = std::abs(mean / (0.5 * kappa * sigma2) - 1.0);
    }
    {
        const Vec2<double> grad0(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
        const double mean = mean_remainder(Mat2<double>::Zero(), grad0, 1.0, 4.0 * Mat2<double>::Identity(),
                                           std::min(samples, 1000), rng);
        r.planar_max_remainder = mean;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Shadow attenuation

ShadowInvariantResult shadow_invariant_check(int grid, int rhos, double rho_min) {
    if (grid < 2 || rhos < 1 || !(rho_min > 0.0)) throw std::invalid_argument("shadow_invariant_check: bad sizes");
    ShadowInvariantResult r;
    const double e_self = 10.0;
    std::vector<double> dh(static_cast<std::size_t>(grid));
    for (int i = 0; i < grid; ++i) dh[static_cast<std::size_t>(i)] = -20.0 + 70.0 * i / (grid - 1);
    dh[static_cast<std::size_t>(grid / 4)] = 0.0;  // the tie point itself
    std::sort(dh.begin(), dh.end());
    for (int k = 0; k < rhos; ++k) {
        const double rho = rhos == 1 ? rho_min : rho_min * std::pow(2.0 / rho_min, static_cast<double>(k) / (rhos - 1));
        double prev = 2.0;
        for (double d : dh) {
            const double s = shadow_coeff(e_self + d, e_self, rho);
            ++r.evaluations;
            if (!(s >= 0.0 && s <= 1.0)) ++r.out_of_range;
            if (s > prev) ++r.not_monotone;
            if (d < 0.0 && s != 1.0) ++r.not_one_when_lit;
            if (d >= 0.0 && rho >= rho_min && s > std::exp(-rho_min * d)) ++r.above_envelope;
            prev = s;
        }
    }
    for (double d : dh) {
        ++r.evaluations;
        if (shadow_coeff(e_self + d, e_self, 0.0) != 1.0) ++r.zero_rho_not_one;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Router logit bounds

RouterSweepResult router_bound_sweep(std::uint64_t seed, int draws) {
    RouterSweepResult r;
    r.min_abs_slack = std::numeric_limits<double>::infinity();
    r.min_prob_slack = std::numeric_limits<double>::infinity();
    Rng rng = Rng::derive(seed, 0x40e7);
    while (r.draws < draws) {
        const int sites = 1 + static_cast<int>(rng.index(8));
        const int heads = 2 + static_cast<int>(rng.index(7));
        const double beta = rng.uniform(0.1, 2.0), tau = rng.uniform(0.5, 2.0), bound = rng.uniform(0.1, 5.0);
        const double gmax = std::sqrt(sites * bound / beta);
        const double spread = rng.uniform(0.0, 1.5) * gmax;
        MatX<double> g(sites, heads);
        for (Eigen::Index k = 0; k < g.size(); ++k) g.data()[k] = rng.uniform(-spread, spread);
        const RouterBoundReport rep = check_router_bounds(g, beta, tau, bound);
        if (!rep.symmetric_precondition) {
            ++r.rejected;
            if (rep.precondition && !rep.abs_ok) ++r.one_sided_counterexamples;
            continue;
        }
        ++r.draws;
        if (!rep.upper_ok || !rep.abs_ok) ++r.bound_violations;
        if (!rep.prob_ok) ++r.floor_violations;
        r.min_abs_slack = std::min(r.min_abs_slack, rep.abs_slack);
        r.min_prob_slack = std::min(r.min_prob_slack, rep.prob_slack);
    }
    // Boundary: one site, one head, logit exactly at the bound.
    const double beta = 0.7, bound = 2.3;
    const double gmax = std::sqrt(bound / beta);
    MatX<double> g(1, 1);
    g(0, 0) = gmax;
    const RouterBoundReport rep = check_router_bounds(g, beta, 1.0, bound);
    r.boundary_gap = std::abs(rep.g_max - rep.max_logit);
    r.boundary_zloss_gap = std::abs(rep.z_loss - bound);
    return r;
}

// ---------------------------------------------------------------------------
// Inner-loop contraction on a strongly convex quadratic

ContractionResult contraction_check(std::uint64_t seed, double mu, double eta, const std::vector<int> &steps) {
    Rng rng = Rng::derive(seed, 0xc0a7);
    const CalibrationBox box;
    auto random_inside = [&] {
        Calibration<double> c;
        for (int k = 0; k < 6; ++k) c.A.data()[k] = rng.uniform(-0.5, 0.5) * box.a_matrix;
        for (int k = 0; k < 2; ++k) c.a[k] = rng.uniform(-0.5, 0.5) * box.a_offset;
        for (int k = 0; k < 3; ++k) {
            c.g[k] = rng.uniform(0.7, 1.5);
            c.b[k] = rng.uniform(-0.5, 0.5) * box.bias;
        }
        c.tau = rng.uniform(0.7, 1.5);
        for (Eigen::Index k = 0; k < c.delta.size(); ++k) c.delta[k] = rng.uniform(-0.5, 0.5) * box.delta;
        return c;
    };
    const Calibration<double> target = random_inside();
    const Calibration<double> start = random_inside();
    const std::vector<double> t = flatten(target).values;
    auto distance = [&](const Calibration<double> &c) {
        const std::vector<double> v = flatten(c).values;
        double acc = 0.0;
        for (std::size_t k = 0; k < v.size(); ++k) acc += (v[k] - t[k]) * (v[k] - t[k]);
        return std::sqrt(acc);
    };
    const auto surrogate = [&](const Calibration<Var> &c) {
        std::vector<Var> flat;
        visit_params(c, [&](const std::string &, const Var *data, std::size_t n) { flat.insert(flat.end(), data, data + n); });
        Var acc(0.0);
        for (std::size_t k = 0; k < flat.size(); ++k) {
            const Var d = flat[k] - t[k];
            acc += d * d;
        }
        return acc * (0.5 * mu);
    };
    ContractionResult r;
    const double d0 = distance(start);
    for (int s : steps) {
        InnerConfig cfg;
        cfg.steps = s;
        cfg.lr = eta;
        const InnerResult res = inner_descent(surrogate, start, cfg);
        const double ratio = distance(res.theta) / d0;
        const double expected = std::pow(1.0 - eta * mu, s);
        r.steps.push_back(s);
        r.ratio.push_back(ratio);
        r.expected.push_back(expected);
        r.max_error = std::max(r.max_error, std::abs(ratio - expected));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Gradient battery

namespace {

template <class T>
struct BatteryModel {
    SlotSet<T> slots;
    SdfField<T> sdf;
    GateField<T> gate;
    Calibration<T> theta;
    Router<T> router;
    std::vector<TaskHead<T>> heads;

    template <class U>
    BatteryModel<U> cast() const {
        BatteryModel<U> m;
        m.slots = slots.template cast<U>();
        m.sdf = sdf.template cast<U>();
        m.gate = gate.template cast<U>();
        m.theta = theta.template cast<U>();
        m.router = router.template cast<U>();
        for (const auto &h : heads) m.heads.push_back(h.template cast<U>());
        return m;
    }

    template <class Self, class F>
    static void visit(Self &self, F &&f) {
        decltype(self.slots)::visit(self.slots, f);
        decltype(self.sdf)::visit(self.sdf, f);
        decltype(self.gate)::visit(self.gate, f);
        // The decoder residual has no effect here and is left out.
        f(std::string("theta.A"), self.theta.A.data(), std::size_t{6});
        f(std::string("theta.a"), self.theta.a.data(), std::size_t{2});
        f(std::string("theta.g"), self.theta.g.data(), std::size_t{3});
        f(std::string("theta.b"), self.theta.b.data(), std::size_t{3});
        f(std::string("theta.tau"), &self.theta.tau, std::size_t{1});
        decltype(self.router)::visit_named(self.router, "router", f);
        for (std::size_t k = 0; k < self.heads.size(); ++k) {
            using H = std::remove_cvref_t<decltype(self.heads[k])>;
            H::visit_named(self.heads[k], "heads[" + std::to_string(k) + "]", f);
        }
    }
};

std::string param_class(const std::string &block) {
    const auto cut = block.find_first_of(".[");
    const std::string head = block.substr(0, cut);
    if (head == "theta") return block;
    return head;
}

struct BatteryScene {
    SceneBox box;
    ViewGeometry views[2];
    ViewGeometry sun_view;
    ViewGeometry dsm_view;
    SunModel sun;
    Atmosphere<double> atm;
    SensorResponse<double> sensor;
    RenderOptions options;
    VecX<double> z_scene;
    std::vector<Vec2<double>> pixels;
    std::vector<double> observed;       // pixels x 3
    std::vector<double> observed_full;  // 8 x 8 x 3
    std::vector<double> teacher, confidence, dsm_ref;
    std::vector<Vec3<double>> ground;   // detached homologous ground points
    std::vector<Vec3<double>> eikonal;
    std::vector<VecX<double>> features;
};

Vec3<double> random_direction(Rng &rng, double min_elevation_deg, double max_elevation_deg) {
    const double el = rng.uniform(min_elevation_deg, max_elevation_deg) * M_PI / 180.0;
    const double az = rng.uniform(0.0, 2.0 * M_PI);
    return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
}

template <class T>
struct Rendered {
    SceneRefs<T> refs;
    VecX<T> z;
    std::vector<PreparedView<T>> views;
    PreparedView<T> sun;
};

template <class T>
T battery_term(const std::string &term, const BatteryModel<T> &m, const BatteryScene &sc) {
    if (term == "sparse") return sparsity(m.slots);
    if (term == "sdf") {
        std::vector<Vec3<T>> centers;
        for (std::size_t k = 0; k < m.slots.capacity(); ++k) {
            if (m.slots.active[k]) centers.push_back(sc.box.normalize(m.slots.slots[k].center));
        }
        return sdf_loss(m.sdf, std::span<const Vec3<double>>(sc.eikonal), std::span<const Vec3<T>>(centers));
    }
    if (term == "load" || term == "z") {
        std::vector<VecX<T>> feats;
        for (const auto &f : sc.features) feats.push_back(f.template cast<T>());
        const auto routed = route_and_apply(std::span<const VecX<T>>(feats), m.router, m.heads);
        if (term == "z") return z_loss(routed.logits, 1.0);
        return load_loss(std::span<const T>(routed.importance.data(), static_cast<std::size_t>(routed.importance.size())));
    }
    const VecX<T> z = sc.z_scene.template cast<T>();
    const SceneRefs<T> refs{&m.slots, &m.sdf, &m.gate, &z};
    const Atmosphere<T> atm = sc.atm.template cast<T>();
    const SensorResponse<T> sensor = sc.sensor.template cast<T>();
    const auto v0 = prepare_view(sc.views[0], refs, sc.box, sc.options, &m.theta, true);
    if (term == "photo" || term == "perceptual") {
        const auto sv = prepare_view(sc.sun_view, refs, sc.box, sc.options, &m.theta, false);
        std::vector<T> rgb;
        if (term == "photo") {
            for (const auto &u : sc.pixels) {
                const auto px = render_pixel(v0, &sv, sc.sun, atm, sensor, Vec2<T>(T(u[0]), T(u[1])));
                for (int ch = 0; ch < 3; ++ch) rgb.push_back(px.color[ch]);
            }
            return photo_loss(std::span<const T>(rgb), std::span<const double>(sc.observed));
        }
        for (int r = 0; r < 8; ++r) {
            for (int c = 0; c < 8; ++c) {
                const auto px = render_pixel(v0, &sv, sc.sun, atm, sensor, Vec2<T>(T(r + 0.5), T(c + 0.5)));
                for (int ch = 0; ch < 3; ++ch) rgb.push_back(px.color[ch]);
            }
        }
        return perceptual_proxy(std::span<const T>(rgb), std::span<const double>(sc.observed_full), 8, 8, 3);
    }
    if (term == "distill") {
        std::vector<T> e;
        for (const auto &u : sc.pixels) e.push_back(render_elevation(v0, Vec2<T>(T(u[0]), T(u[1]))).elevation);
        return distill_loss(std::span<const T>(e), std::span<const double>(sc.teacher),
                            std::span<const double>(sc.confidence));
    }
    if (term == "reproj") {
        const auto v1 = prepare_view(sc.views[1], refs, sc.box, sc.options, &m.theta, true);
        std::vector<std::vector<T>> samples(2);
        for (const auto &g : sc.ground) {
            const Vec3<T> p{T(g[0]), T(g[1]), T(g[2])};
            for (int j = 0; j < 2; ++j) {
                const auto &pv = j == 0 ? v0 : v1;
                const auto hom = project(*pv.view, p, pv.pixel_calib(), sc.box).pixel;
                samples[static_cast<std::size_t>(j)].push_back(render_elevation(pv, hom).elevation);
            }
        }
        return reproj_loss(samples);
    }
    if (term == "dsm") {
        const auto dv = prepare_view(sc.dsm_view, refs, sc.box, sc.options, &m.theta, false);
        std::vector<T> e;
        for (const auto &u : sc.pixels) e.push_back(render_elevation(dv, Vec2<T>(T(u[0]), T(u[1]))).elevation);
        const std::vector<std::uint8_t> mask(e.size(), 1);
        return dsm_loss(std::span<const T>(e), std::span<const double>(sc.dsm_ref), std::span<const std::uint8_t>(mask));
    }
    throw std::invalid_argument("unknown battery term " + term);
}

void random_battery(std::uint64_t seed, int config, BatteryModel<double> &m, BatteryScene &sc) {
    Rng rng = Rng::derive(seed, 0x6a77, static_cast<std::uint64_t>(config));
    sc.box.lo = Vec3<double>(0.0, 0.0, -4.0);
    sc.box.hi = Vec3<double>(32.0, 32.0, 12.0);
    m.slots = SlotSet<double>(5);
    for (int k = 0; k < 4; ++k) {
        GaussianPrimitive<double> p;
        p.center = Vec3<double>(rng.uniform(4.0, 28.0), rng.uniform(4.0, 28.0), rng.uniform(0.0, 8.0));
        p.geom.log_scales = Vec3<double>(std::log(rng.uniform(3.0, 6.0)), std::log(rng.uniform(3.0, 6.0)),
                                         std::log(rng.uniform(0.5, 2.0)));
        p.geom.rotation = normalized_quaternion(
            Vec4<double>(1.0, rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)));
        p.radio.log_scales = Vec3<double>(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
        p.radio.rotation = normalized_quaternion(
            Vec4<double>(1.0, rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)));
        p.opacity_logit = rng.uniform(-1.0, 2.0);
        p.brdf = Vec4<double>(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.0, 0.5));
        for (int q = 0; q < kAppearanceDim; ++q) p.appearance[q] = rng.uniform(-0.5, 0.5);
        m.slots.insert(p);
    }
    // A tilted plane crossing the box, with every weight nudged off its exact value.
    m.sdf = make_plane_sdf(3, 6, 1, 0, rng.uniform(-0.3, 0.1));
    for (auto &l : m.sdf.layers) {
        for (Eigen::Index k = 0; k < l.weight.size(); ++k) l.weight.data()[k] += rng.uniform(-0.05, 0.05);
        for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias[k] += rng.uniform(-0.05, 0.05);
    }
    m.gate = make_gate(4);
    init_gate(m.gate, rng);
    m.theta.A = Eigen::Matrix<double, 2, 3>::NullaryExpr([&] { return rng.uniform(-0.05, 0.05); });
    m.theta.a = Vec2<double>(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    m.theta.g = Vec3<double>(rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2));
    m.theta.b = Vec3<double>(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
    m.theta.tau = rng.uniform(0.8, 1.2);
    m.router = make_router(6, 4, 2, 1.0);
    m.router.proj.init_uniform(rng);
    m.heads.clear();
    for (int j = 0; j < 4; ++j) {
        auto h = make_head(6, 5, static_cast<HeadRole>(j));
        h.inner.init_uniform(rng);
        h.outer.init_uniform(rng);
        m.heads.push_back(h);
    }

    sc.views[0] = make_satellite_view(sc.box, random_direction(rng, 70.0, 89.0), 8, 8, "v0");
    sc.views[1] = make_satellite_view(sc.box, random_direction(rng, 70.0, 89.0), 8, 8, "v1");
    sc.dsm_view = make_satellite_view(sc.box, Vec3<double>(0.0, 0.0, 1.0), 8, 8, "dsm");
    sc.sun.direction = random_direction(rng, 40.0, 70.0);
    sc.sun.sharpness = 0.5;
    sc.sun_view = make_sun_view(sc.box, sc.sun.direction, 4.0);
    sc.atm.transmittance = rng.uniform(0.85, 1.0);
    sc.atm.haze = Vec3<double>(rng.uniform(0.0, 0.05), rng.uniform(0.0, 0.05), rng.uniform(0.0, 0.05));
    sc.sensor.gain = Vec3<double>(rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1));
    sc.sensor.bias = Vec3<double>(rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03));
    sc.sensor.gamma = 1.0;
    sc.options.cull = false;  // the cull boundary is a jump, not a kink
    sc.options.march_steps = 32;
    sc.z_scene = VecX<double>(kLatentDim);
    for (int k = 0; k < kLatentDim; ++k) sc.z_scene[k] = rng.uniform(-1.0, 1.0);
    sc.pixels.clear();
    sc.observed.clear();
    sc.teacher.clear();
    sc.confidence.clear();
    sc.dsm_ref.clear();
    for (int k = 0; k < 6; ++k) {
        sc.pixels.emplace_back(rng.uniform(0.5, 7.5), rng.uniform(0.5, 7.5));
        for (int ch = 0; ch < 3; ++ch) sc.observed.push_back(rng.uniform(0.0, 1.0));
        sc.teacher.push_back(rng.uniform(0.0, 8.0));
        sc.confidence.push_back(rng.uniform(0.1, 1.0));
        sc.dsm_ref.push_back(rng.uniform(0.0, 8.0));
    }
    sc.observed_full.resize(8 * 8 * 3);
    for (double &v : sc.observed_full) v = rng.uniform(0.0, 1.0);
    sc.eikonal.clear();
    for (int k = 0; k < 6; ++k) sc.eikonal.emplace_back(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    sc.features.clear();
    for (int k = 0; k < 5; ++k) {
        VecX<double> f(6);
        for (int q = 0; q < 6; ++q) f[q] = rng.uniform(-1.0, 1.0);
        sc.features.push_back(f);
    }
    // Ground points for the homologous samples come from the unperturbed scene.
    const SceneRefs<double> refs{&m.slots, &m.sdf, &m.gate, &sc.z_scene};
    const auto v0 = prepare_view(sc.views[0], refs, sc.box, sc.options, &m.theta, true);
    sc.ground.clear();
    for (int k = 0; k < 4; ++k) {
        const auto e = render_elevation(v0, sc.pixels[static_cast<std::size_t>(k)]);
        sc.ground.push_back(e.ray.at(e.altitude));
    }
}

}  // namespace

GradientBatteryResult gradient_battery(std::uint64_t seed, int configs) {
    static const std::vector<std::pair<std::string, std::vector<std::string>>> kTerms = {
        {"photo", {"slots", "sdf", "gate", "theta.A", "theta.a", "theta.g", "theta.b", "theta.tau"}},
        {"perceptual", {"slots", "sdf", "gate", "theta.A", "theta.a", "theta.g", "theta.b", "theta.tau"}},
        {"reproj", {"slots", "sdf", "gate", "theta.A", "theta.a", "theta.tau"}},
        {"dsm", {"slots", "sdf", "gate", "theta.tau"}},
        {"distill", {"slots", "sdf", "gate", "theta.A", "theta.a", "theta.tau"}},
        {"sdf", {"slots", "sdf"}},
        {"sparse", {"slots"}},
        {"load", {"router"}},
        {"z", {"router"}},
    };
    GradientBatteryResult out;
    std::size_t total = 0, excluded = 0;
    for (const auto &[term, classes] : kTerms) {
        std::map<std::string, GradientEntry> per_class;
        for (const auto &c : classes) per_class[c] = GradientEntry{term, c, 0, 0, 0, 0.0};
        for (int cfg = 0; cfg < configs; ++cfg) {
            BatteryModel<double> base;
            BatteryScene scene;
            random_battery(seed, cfg, base, scene);
            const ParamVector flat = flatten(base);
            std::vector<std::size_t> idx;
            std::vector<std::string> owner;
            for (const auto &b : flat.blocks) {
                const std::string c = param_class(b.name);
                if (!per_class.count(c)) continue;
                for (std::size_t k = 0; k < b.size; ++k) {
                    idx.push_back(b.offset + k);
                    owner.push_back(c);
                }
            }
            std::vector<double> at;
            for (auto i : idx) at.push_back(flat.values[i]);
            auto f = [&](auto xs) {
                using S = std::remove_cvref_t<decltype(xs[0])>;
                std::vector<S> full(flat.values.begin(), flat.values.end());
                for (std::size_t k = 0; k < idx.size(); ++k) full[idx[k]] = xs[k];
                BatteryModel<S> m = base.template cast<S>();
                assign(m, std::span<const S>(full));
                return battery_term<S>(term, m, scene);
            };
            const GradCheckReport rep = check_grad<long double>(f, std::span<const double>(at), 1e-5);
            std::vector<std::uint8_t> skip(at.size(), 0);
            for (auto k : rep.excluded) skip[k] = 1;
            for (std::size_t k = 0; k < at.size(); ++k) {
                GradientEntry &e = per_class[owner[k]];
                ++e.coordinates;
                ++total;
                if (skip[k]) {
                    ++e.excluded;
                    ++excluded;
                    continue;
                }
                const double a = rep.analytic[k], n = rep.numeric[k];
                const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
                e.max_rel_error = std::max(e.max_rel_error, rel);
            }
            for (auto &[c, e] : per_class) ++e.configs;
        }
        for (const auto &c : classes) {
            out.max_rel_error = std::max(out.max_rel_error, per_class[c].max_rel_error);
            out.entries.push_back(per_class[c]);
        }
    }
    out.excluded_fraction = total ? static_cast<double>(excluded) / static_cast<double>(total) : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Consistency of a 1-D gated two-component field

namespace {

constexpr int kBumps = 12;
constexpr int kSmooth = 5;

struct Field1d {
    double gate_slope = 10.0, gate_center = 0.5;
    VecX<double> coef = VecX<double>::Zero(kBumps + kSmooth);
};

VecX<double> field_features(double x, double slope, double center) {
    const double lambda = 1.0 / (1.0 + std::exp(-slope * (x - center)));
    VecX<double> f(kBumps + kSmooth);
    const double width = 1.5 / (2.0 * kBumps);
    for (int k = 0; k < kBumps; ++k) {
        const double d = (x - (k + 0.5) / kBumps) / width;
        f[k] = lambda * std::exp(-0.5 * d * d);
    }
    // Chebyshev polynomials stand in for the dense implicit component.
    const double t = 2.0 * x - 1.0;
    double t0 = 1.0, t1 = t;
    for (int m = 0; m < kSmooth; ++m) {
        const double tm = m == 0 ? t0 : (m == 1 ? t1 : 0.0);
        double v = tm;
        if (m >= 2) {
            v = 2.0 * t * t1 - t0;
            t0 = t1;
            t1 = v;
        }
        f[kBumps + m] = (1.0 - lambda) * v;
    }
    return f;
}

double field_eval(const Field1d &w, double x) { return field_features(x, w.gate_slope, w.gate_center).dot(w.coef); }

Field1d fit_field(const std::vector<double> &xs, const std::vector<double> &ys) {
    Field1d best;
    double best_err = std::numeric_limits<double>::infinity();
    for (double slope : {4.0, 8.0, 16.0, 32.0}) {
        for (int c = 2; c <= 8; ++c) {
            const double center = 0.1 * c;
            MatX<double> x(static_cast<Eigen::Index>(xs.size()), kBumps + kSmooth);
            VecX<double> y(static_cast<Eigen::Index>(xs.size()));
            for (std::size_t i = 0; i < xs.size(); ++i) {
                x.row(static_cast<Eigen::Index>(i)) = field_features(xs[i], slope, center).transpose();
                y[static_cast<Eigen::Index>(i)] = ys[i];
            }
            MatX<double> normal = x.transpose() * x;
            normal.diagonal().array() += 1e-4;
            Field1d w;
            w.gate_slope = slope;
            w.gate_center = center;
            w.coef = normal.ldlt().solve(x.transpose() * y);
            const double err = (x * w.coef - y).squaredNorm();
            if (err < best_err) {
                best_err = err;
                best = w;
            }
        }
    }
    return best;
}

}  // namespace

ConsistencyResult consistency_trend(std::uint64_t seed, const std::vector<int> &sample_counts, int seeds,
                                    double slack) {
    ConsistencyResult r;
    r.sample_counts = sample_counts;
    r.mean_error.assign(sample_counts.size(), 0.0);
    for (int s = 0; s < seeds; ++s) {
        Rng rng = Rng::derive(seed, 0xc025, static_cast<std::uint64_t>(s));
        Field1d truth;
        truth.gate_slope = rng.uniform(5.0, 20.0);
        truth.gate_center = rng.uniform(0.3, 0.7);
        for (Eigen::Index k = 0; k < truth.coef.size(); ++k) truth.coef[k] = rng.uniform(-1.0, 1.0);
        std::vector<double> errs;
        for (int m : sample_counts) {
            std::vector<double> xs, ys;
            for (int i = 0; i < m; ++i) {
                const double x = rng.uniform();
                xs.push_back(x);
                ys.push_back(field_eval(truth, x) + 0.05 * rng.normal());
            }
            const Field1d fit = fit_field(xs, ys);
            double err = 0.0;
            const int test = 2001;
            for (int i = 0; i < test; ++i) {
                const double x = static_cast<double>(i) / (test - 1);
                err += std::abs(field_eval(fit, x) - field_eval(truth, x));
            }
            errs.push_back(err / test);
        }
        for (std::size_t k = 0; k < errs.size(); ++k) {
            r.mean_error[k] += errs[k] / seeds;
            if (k > 0 && errs[k] > (1.0 + slack) * errs[k - 1]) ++r.violations;
        }
        r.errors.push_back(errs);
    }
    return r;
}

// ---------------------------------------------------------------------------

bool VerifyReport::all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const VerifyCheck &c) { return c.pass; });
}

std::string VerifyReport::format() const {
    std::ostringstream out;
    for (const auto &c : checks) out << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    out << (all_pass() ? "all checks passed" : "some checks failed") << '\n';
    return out.str();
}

namespace {

std::string fmt(const char *f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

}  // namespace

VerifyReport verify_bounds(std::uint64_t seed, const VerifyTolerances &tol) {
    VerifyReport rep;
    {
        const auto g = geometric_bound_check(seed, 20, tol.geometric_samples, tol.geometric);
        const bool ok = g.violations == 0 && g.equality_rel_error <= tol.geometric && g.planar_max_remainder <= 1e-9;
        rep.checks.push_back({"geometric_bound", ok,
                              fmt("worst ratio %.6f over %d surfaces, equality error %.6f, planar remainder %.3g",
                                  g.worst_ratio, g.surfaces, g.equality_rel_error, g.planar_max_remainder)});
    }
    {
        const auto s = shadow_invariant_check(1000, 10, 0.05);
        rep.checks.push_back({"shadow_invariants", s.violations() == 0,
                              fmt("%zu evaluations, %zu violations (range %zu, monotone %zu, lit %zu, envelope %zu, "
                                  "rho=0 %zu)",
                                  s.evaluations, s.violations(), s.out_of_range, s.not_monotone, s.not_one_when_lit,
                                  s.above_envelope, s.zero_rho_not_one)});
    }
    {
        const auto r = router_bound_sweep(seed, tol.router_draws);
        const bool ok = r.bound_violations == 0 && r.floor_violations == 0 && r.boundary_gap <= tol.router_tight &&
                        r.boundary_zloss_gap <= tol.router_tight;
        rep.checks.push_back(
            {"router_bounds", ok,
             fmt("%d draws, %d bound and %d floor violations, boundary gap %.3g, min slack %.6f / %.3g, "
                 "%d one-sided counterexamples",
                 r.draws, r.bound_violations, r.floor_violations, r.boundary_gap, r.min_abs_slack, r.min_prob_slack,
                 r.one_sided_counterexamples)});
    }
    {
        const auto c = contraction_check(seed);
        std::string d = fmt("max error %.3g;", c.max_error);
        for (std::size_t k = 0; k < c.steps.size(); ++k) d += fmt(" S=%d ratio %.9f", c.steps[k], c.ratio[k]);
        rep.checks.push_back({"inner_contraction", c.max_error <= tol.contraction, d});
    }
    {
        const auto g = gradient_battery(seed, tol.gradient_configs);
        const bool ok = g.max_rel_error <= tol.gradient && g.excluded_fraction <= tol.max_excluded_fraction;
        rep.checks.push_back({"gradient_battery", ok,
                              fmt("max relative error %.3g over %zu term/class pairs, %.4f of coordinates at kinks",
                                  g.max_rel_error, g.entries.size(), g.excluded_fraction)});
    }
    {
        const auto c = consistency_trend(seed, {16, 64, 256}, 5, tol.consistency_slack);
        std::string d = fmt("%d violations; mean error", c.violations);
        for (std::size_t k = 0; k < c.sample_counts.size(); ++k) d += fmt(" M=%d %.5f", c.sample_counts[k], c.mean_error[k]);
        rep.checks.push_back({"consistency_trend", c.violations == 0, d});
    }
    return rep;
}

}  // namespace swiftgs
