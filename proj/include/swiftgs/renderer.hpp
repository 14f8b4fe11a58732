// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable satellite image formation: projection with per-scene pixel
// correction, depth-sorted splat compositing, fused Gaussian/SDF elevation,
// sun-camera shadowing, Lambert plus Phong shading, atmosphere and sensor.
#pragma once

#include "swiftgs/calibration.hpp"
#include "swiftgs/representation.hpp"
#include "swiftgs/rpc.hpp"

#include <algorithm>
#include <memory>
#include <numeric>
#include <optional>
#include <type_traits>

namespace swiftgs {

struct ViewGeometry {
    enum class Kind { Affine, Rpc };
    Kind kind = Kind::Affine;
    Eigen::Matrix<double, 3, 4> affine = Eigen::Matrix<double, 3, 4>::Zero();  // world -> (row, col, depth)
    std::shared_ptr<const RpcMetadata> rpc;
    int height = 64;
    int width = 64;
    double gsd = 4.0;
    std::string name = "view";

    /// Throws std::invalid_argument when the kind and its data disagree.
    void validate() const;
};

/// Orthographic view: pixel = M[:, :3] p + M[:, 3] with rows (row, col, depth).
ViewGeometry make_affine_view(const Eigen::Matrix<double, 3, 4> &m, int height, int width, double gsd,
                              std::string name = "view");
/// Satellite view looking along -(dir) where `dir` points from the ground to the sensor.
ViewGeometry make_satellite_view(const SceneBox &box, const Vec3<double> &toward_sensor, int height, int width,
                                 std::string name = "view");
/// Orthographic camera whose rays run parallel to -sun over the scene box.
ViewGeometry make_sun_view(const SceneBox &box, const Vec3<double> &sun, double cell, std::string name = "sun");

struct SunModel {
    Vec3<double> direction = Vec3<double>(0.0, 0.0, 1.0);  // toward the sun
    double sharpness = 0.5;                                 // rho_sh, 1/m

    void validate() const;
};

template <class T>
struct Atmosphere {
    T transmittance = T(1);
    Vec3<T> haze = Vec3<T>::Zero();

    template <class U>
    Atmosphere<U> cast() const {
        return {U(transmittance), haze.template cast<U>()};
    }
};

template <class T>
struct SensorResponse {
    Vec3<T> gain = Vec3<T>::Ones();
    Vec3<T> bias = Vec3<T>::Zero();
    T gamma = T(1);

    template <class U>
    SensorResponse<U> cast() const {
        return {gain.template cast<U>(), bias.template cast<U>(), U(gamma)};
    }
};

inline constexpr int kSpecularExponent = 8;

template <class T>
struct Projected {
    Vec2<T> pixel;
    T depth;
};

template <class T>
Vec2<double> values(const Vec2<T> &v) {
    return {value(v[0]), value(v[1])};
}
template <class T>
Vec3<double> values(const Vec3<T> &v) {
    return {value(v[0]), value(v[1]), value(v[2])};
}

template <class T>
bool correction_is_identity(const Calibration<T> &c) {
    for (int k = 0; k < 6; ++k) {
        if (!is_zero_constant(c.A.data()[k])) return false;
    }
    return is_zero_constant(c.a[0]) && is_zero_constant(c.a[1]);
}

/// Adds A x_norm + a to a pixel.
template <class T>
Vec2<T> apply_correction(const Vec2<T> &px, const Vec3<T> &world, const Calibration<T> *calib, const SceneBox &box) {
    if (!calib || correction_is_identity(*calib)) return px;
    const Vec3<T> xn = box.normalize(world);
    Vec2<T> out;
    for (int r = 0; r < 2; ++r) {
        out[r] = px[r] + calib->A(r, 0) * xn[0] + calib->A(r, 1) * xn[1] + calib->A(r, 2) * xn[2] + calib->a[r];
    }
    return out;
}

template <class T>
Projected<T> project(const ViewGeometry &view, const Vec3<T> &p, const Calibration<T> *calib, const SceneBox &box) {
    Projected<T> out;
    if (view.kind == ViewGeometry::Kind::Affine) {
        Vec2<T> px;
        for (int r = 0; r < 2; ++r) {
            px[r] = T(view.affine(r, 0)) * p[0] + T(view.affine(r, 1)) * p[1] + T(view.affine(r, 2)) * p[2] +
                    T(view.affine(r, 3));
        }
        out.depth = T(view.affine(2, 0)) * p[0] + T(view.affine(2, 1)) * p[1] + T(view.affine(2, 2)) * p[2] +
                    T(view.affine(2, 3));
        out.pixel = apply_correction(px, p, calib, box);
    } else {
        const auto e = rpc_project(*view.rpc, p, view.name, false);
        out.pixel = apply_correction(e.pixel, p, calib, box);
        out.depth = -p[2];
    }
    return out;
}

/// d pixel / d world at p, including the pixel correction.
template <class T>
Eigen::Matrix<T, 2, 3> project_jacobian(const ViewGeometry &view, const Vec3<T> &p, const Calibration<T> *calib,
                                        const SceneBox &box) {
    Eigen::Matrix<T, 2, 3> j;
    if (view.kind == ViewGeometry::Kind::Affine) {
        for (int r = 0; r < 2; ++r) {
            for (int a = 0; a < 3; ++a) j(r, a) = T(view.affine(r, a));
        }
    } else {
        j = rpc_project(*view.rpc, p, view.name, true).jacobian;
    }
    if (calib && !correction_is_identity(*calib)) {
        const Vec3<double> h = box.half();
        for (int r = 0; r < 2; ++r) {
            for (int a = 0; a < 3; ++a) j(r, a) = j(r, a) + calib->A(r, a) * T(1.0 / h[a]);
        }
    }
    return j;
}

/// World points that image to one pixel, parameterized by altitude:
/// p(z) = (origin + slope z, z).
template <class T>
struct AltitudeRay {
    Vec2<T> origin;
    Vec2<T> slope;

    Vec3<T> at(const T &z) const { return Vec3<T>(origin[0] + slope[0] * z, origin[1] + slope[1] * z, z); }
    /// Unit vector pointing up the ray (toward the sensor for satellite views).
    Vec3<T> upward() const {
        using std::sqrt;
        const T n = sqrt(slope[0] * slope[0] + slope[1] * slope[1] + T(1));
        return Vec3<T>(slope[0] / n, slope[1] / n, T(1) / n);
    }
    AltitudeRay<double> values() const { return {swiftgs::values(origin), swiftgs::values(slope)}; }
};

template <class T>
Vec2<T> solve2(const Mat2<T> &m, const Vec2<T> &rhs) {
    const T det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    return Vec2<T>((m(1, 1) * rhs[0] - m(0, 1) * rhs[1]) / det, (m(0, 0) * rhs[1] - m(1, 0) * rhs[0]) / det);
}

/// Ray through continuous pixel u. Affine views invert the corrected affine map
/// exactly; RPC views invert by Newton iteration at the two box altitudes and
/// finish with one differentiable Newton step.
template <class T>
AltitudeRay<T> pixel_ray(const ViewGeometry &view, const Vec2<T> &u, const Calibration<T> *calib,
                         const SceneBox &box) {
    AltitudeRay<T> ray;
    if (view.kind == ViewGeometry::Kind::Affine) {
        Mat2<T> m;
        Vec2<T> t;
        Vec2<T> mz;
        const bool corr = calib && !correction_is_identity(*calib);
        const Vec3<double> c = box.center();
        const Vec3<double> h = box.half();
        for (int r = 0; r < 2; ++r) {
            T col[3];
            T off = T(view.affine(r, 3));
            for (int a = 0; a < 3; ++a) {
                col[a] = T(view.affine(r, a));
                if (corr) {
                    col[a] = col[a] + calib->A(r, a) * T(1.0 / h[a]);
                    off = off - calib->A(r, a) * T(c[a] / h[a]);
                }
            }
            if (corr) off = off + calib->a[r];
            m(r, 0) = col[0];
            m(r, 1) = col[1];
            mz[r] = col[2];
            t[r] = off;
        }
        ray.origin = solve2(m, Vec2<T>(u[0] - t[0], u[1] - t[1]));
        ray.slope = solve2(m, Vec2<T>(-mz[0], -mz[1]));
        return ray;
    }
    const double zs[2] = {box.lo[2], box.hi[2]};
    Vec2<T> xy[2];
    const Vec2<double> ud = values(u);
    Calibration<double> cd;
    if (calib) cd = calib->template cast<double>();
    const Calibration<double> *cdp = calib ? &cd : nullptr;
    for (int s = 0; s < 2; ++s) {
        Vec2<double> x(box.center()[0], box.center()[1]);
        Mat2<double> jm;
        for (int it = 0; it < 30; ++it) {
            const Vec3<double> p(x[0], x[1], zs[s]);
            const Vec2<double> f = project(view, p, cdp, box).pixel - ud;
            const auto jac = project_jacobian(view, p, cdp, box);
            jm << jac(0, 0), jac(0, 1), jac(1, 0), jac(1, 1);
            const Vec2<double> step = solve2(jm, f);
            x -= step;
            if (step.norm() < 1e-12 * (1.0 + x.norm())) break;
        }
        const Vec3<T> pt{T(x[0]), T(x[1]), T(zs[s])};
        const Vec2<T> f = project(view, pt, calib, box).pixel - u;
        const Vec2<T> step = solve2(Mat2<T>(jm.template cast<T>()), f);
        xy[s] = Vec2<T>(T(x[0]) - step[0], T(x[1]) - step[1]);
    }
    const T dz = T(1.0 / (zs[1] - zs[0]));
    ray.slope = Vec2<T>((xy[1][0] - xy[0][0]) * dz, (xy[1][1] - xy[0][1]) * dz);
    ray.origin = Vec2<T>(xy[0][0] - ray.slope[0] * T(zs[0]), xy[0][1] - ray.slope[1] * T(zs[0]));
    return ray;
}

struct RenderOptions {
    bool cull = true;          // false evaluates every splat at every pixel
    double cull_radius = 4.0;  // in standard deviations of the footprint
    int march_steps = 64;
    int tile = 8;
};

/// Borrowed references to everything a render reads.
template <class T>
struct SceneRefs {
    const SlotSet<T> *slots = nullptr;
    const SdfField<T> *sdf = nullptr;
    const GateField<T> *gate = nullptr;  // absent: every primitive fully gated in
    const VecX<T> *z_scene = nullptr;
};

template <class T>
struct Splat {
    std::uint32_t slot = 0;
    Vec2<T> mean;
    T depth;
    T alpha;          // opacity times gate
    T conic[3];       // inverse footprint covariance (xx, xy, yy)
    T altitude;       // world z of the center
    Vec2<double> lo;  // culling box in pixels
    Vec2<double> hi;
};

/// Per-view precomputation: projected and depth-sorted splats plus tile bins.
template <class T>
struct PreparedView {
    const ViewGeometry *view = nullptr;
    SceneBox box;
    RenderOptions options;
    SceneRefs<T> scene;
    std::optional<Calibration<T>> calib;
    bool correct_pixels = true;
    T tau = T(1);
    SdfField<double> sdf_values;  // for the root search
    std::vector<Splat<T>> splats;
    int tiles_r = 0;
    int tiles_c = 0;
    std::vector<std::vector<std::uint32_t>> bins;

    const Calibration<T> *pixel_calib() const { return calib && correct_pixels ? &*calib : nullptr; }
};

template <class T>
PreparedView<T> prepare_view(const ViewGeometry &view, const SceneRefs<T> &scene, const SceneBox &box,
                             const RenderOptions &options, const Calibration<T> *calib, bool correct_pixels = true) {
    PreparedView<T> pv;
    pv.view = &view;
    pv.box = box;
    pv.options = options;
    pv.scene = scene;
    if (calib) pv.calib = *calib;
    pv.correct_pixels = correct_pixels;
    pv.tau = calib ? calib->tau : T(1);
    if (scene.sdf) pv.sdf_values = scene.sdf->template cast<double>();
    const Calibration<T> *pc = pv.pixel_calib();
    if (scene.slots) {
        const SlotSet<T> &slots = *scene.slots;
        for (std::size_t k = 0; k < slots.capacity(); ++k) {
            if (!slots.active[k]) continue;
            const GaussianPrimitive<T> &p = slots.slots[k];
            Splat<T> s;
            s.slot = static_cast<std::uint32_t>(k);
            const Projected<T> pr = project(view, p.center, pc, box);
            s.mean = pr.pixel;
            s.depth = pr.depth;
            s.altitude = p.center[2];
            s.alpha = p.opacity();
            if (scene.gate && scene.z_scene) s.alpha = s.alpha * eval_gate(*scene.z_scene, box.normalize(p.center), *scene.gate);
            const Eigen::Matrix<T, 2, 3> j = project_jacobian(view, p.center, pc, box);
            const Mat3<T> cov = covariance_from_factors(p.geom);
            const Eigen::Matrix<T, 2, 3> jc = j * cov;
            T c00(0), c01(0), c11(0);
            for (int a = 0; a < 3; ++a) {
                c00 += jc(0, a) * j(0, a);
                c01 += jc(0, a) * j(1, a);
                c11 += jc(1, a) * j(1, a);
            }
            const T det = c00 * c11 - c01 * c01;
            s.conic[0] = c11 / det;
            s.conic[1] = -c01 / det;
            s.conic[2] = c00 / det;
            const Vec2<double> m = values(s.mean);
            if (options.cull) {
                const double rx = options.cull_radius * std::sqrt(std::max(0.0, value(c00)));
                const double ry = options.cull_radius * std::sqrt(std::max(0.0, value(c11)));
                s.lo = Vec2<double>(m[0] - rx, m[1] - ry);
                s.hi = Vec2<double>(m[0] + rx, m[1] + ry);
            } else {
                const double inf = std::numeric_limits<double>::infinity();
                s.lo = Vec2<double>(-inf, -inf);
                s.hi = Vec2<double>(inf, inf);
            }
            pv.splats.push_back(s);
        }
    }
    std::stable_sort(pv.splats.begin(), pv.splats.end(), [](const Splat<T> &a, const Splat<T> &b) {
        return value(a.depth) < value(b.depth);
    });
    if (options.cull && options.tile > 0) {
        pv.tiles_r = (view.height + options.tile - 1) / options.tile;
        pv.tiles_c = (view.width + options.tile - 1) / options.tile;
        pv.bins.assign(static_cast<std::size_t>(pv.tiles_r) * pv.tiles_c, {});
        for (std::uint32_t i = 0; i < pv.splats.size(); ++i) {
            const auto &s = pv.splats[i];
            const int r0 = std::max(0, static_cast<int>(std::floor(s.lo[0] / options.tile)));
            const int r1 = std::min(pv.tiles_r - 1, static_cast<int>(std::floor(s.hi[0] / options.tile)));
            const int c0 = std::max(0, static_cast<int>(std::floor(s.lo[1] / options.tile)));
            const int c1 = std::min(pv.tiles_c - 1, static_cast<int>(std::floor(s.hi[1] / options.tile)));
            for (int r = r0; r <= r1; ++r) {
                for (int c = c0; c <= c1; ++c) pv.bins[static_cast<std::size_t>(r) * pv.tiles_c + c].push_back(i);
            }
        }
    }
    return pv;
}

template <class T>
struct Composite {
    std::vector<std::pair<std::uint32_t, T>> weights;  // (index into splats, omega)
    T transmittance = T(1);

    T weight_sum() const {
        T acc(0);
        for (const auto &w : weights) acc += w.second;
        return acc;
    }
};

template <class T>
T footprint(const Splat<T> &s, const Vec2<T> &u) {
    using std::exp;
    const T dx = u[0] - s.mean[0];
    const T dy = u[1] - s.mean[1];
    return exp(T(-0.5) * (s.conic[0] * dx * dx + T(2) * s.conic[1] * dx * dy + s.conic[2] * dy * dy));
}

/// Front-to-back compositing at continuous pixel u.
template <class T>
Composite<T> splat_weights(const PreparedView<T> &pv, const Vec2<T> &u) {
    Composite<T> out;
    const Vec2<double> ud = values(u);
    auto visit = [&](std::uint32_t i) {
        const Splat<T> &s = pv.splats[i];
        if (ud[0] < s.lo[0] || ud[0] > s.hi[0] || ud[1] < s.lo[1] || ud[1] > s.hi[1]) return;
        const T a = s.alpha * footprint(s, u);
        if (value(a) == 0.0 && is_zero_constant(a)) return;
        out.weights.emplace_back(i, a * out.transmittance);
        out.transmittance = out.transmittance * (T(1) - a);
    };
    const int tile = pv.options.tile;
    const bool binned = !pv.bins.empty() && ud[0] >= 0.0 && ud[1] >= 0.0 && ud[0] < pv.view->height &&
                        ud[1] < pv.view->width;
    if (binned) {
        const int r = static_cast<int>(ud[0]) / tile;
        const int c = static_cast<int>(ud[1]) / tile;
        for (std::uint32_t i : pv.bins[static_cast<std::size_t>(r) * pv.tiles_c + c]) visit(i);
    } else {
        for (std::uint32_t i = 0; i < pv.splats.size(); ++i) visit(i);
    }
    return out;
}

template <class T>
struct SdfHit {
    T altitude;
    bool found = false;
    bool clamped = false;
};

/// First sign change of the SDF along the ray from the box top, located by a
/// fixed-step march and refined by one differentiable secant step.
template <class T>
SdfHit<T> sdf_ray_altitude(const PreparedView<T> &pv, const AltitudeRay<T> &ray) {
    SdfHit<T> hit;
    hit.altitude = T(pv.box.lo[2]);
    if (!pv.scene.sdf) return hit;
    const AltitudeRay<double> rd = ray.values();
    const double top = pv.box.hi[2];
    const int steps = std::max(1, pv.options.march_steps);
    const double dz = (pv.box.hi[2] - pv.box.lo[2]) / steps;
    bool clamped = false;
    const double first = eval_sdf(pv.sdf_values, pv.box.normalize(rd.at(top)), &clamped);
    hit.clamped = clamped;
    if (first <= 0.0) {
        hit.altitude = T(top);
        hit.found = true;
        return hit;
    }
    for (int k = 1; k <= steps; ++k) {
        const double z = top - k * dz;
        const double cur = eval_sdf(pv.sdf_values, pv.box.normalize(rd.at(z)), &clamped);
        hit.clamped = hit.clamped || clamped;
        if (cur <= 0.0) {
            const double za = z + dz;
            const T sa = eval_sdf(*pv.scene.sdf, pv.box.normalize(ray.at(T(za))));
            const T sb = eval_sdf(*pv.scene.sdf, pv.box.normalize(ray.at(T(z))));
            hit.altitude = T(za) - T(dz) * sa / (sa - sb);
            hit.found = true;
            return hit;
        }
    }
    return hit;
}

template <class T>
struct ElevationSample {
    T elevation;  // tau-scaled, meters
    T altitude;   // unscaled fused altitude
    Composite<T> comp;
    SdfHit<T> sdf;
    AltitudeRay<T> ray;
};

/// tau * (sum_k z_k omega_k + (1 - sum_k omega_k) * z_sdf).
template <class T>
ElevationSample<T> render_elevation(const PreparedView<T> &pv, const Vec2<T> &u) {
    ElevationSample<T> e;
    e.ray = pixel_ray(*pv.view, u, pv.pixel_calib(), pv.box);
    e.comp = splat_weights(pv, u);
    e.sdf = sdf_ray_altitude(pv, e.ray);
    T acc(0);
    for (const auto &[i, w] : e.comp.weights) acc += pv.splats[i].altitude * w;
    e.altitude = acc + e.comp.transmittance * e.sdf.altitude;
    e.elevation = pv.tau * e.altitude;
    return e;
}

/// min(exp(-rho dh), 1); the clamped branch has zero derivative and a tie
/// at dh = 0 takes the exponential branch.
template <class T>
T shadow_coeff(const T &e_sun, const T &e_self, double rho) {
    using std::exp;
    const T dh = e_sun - e_self;
    if (dh < T(0)) return T(1);
    return exp(T(-rho) * dh);
}

template <class T>
Vec3<T> reflect(const Vec3<T> &s, const Vec3<T> &n) {
    const T d = n[0] * s[0] + n[1] * s[1] + n[2] * s[2];
    return Vec3<T>(T(2) * d * n[0] - s[0], T(2) * d * n[1] - s[1], T(2) * d * n[2] - s[2]);
}

/// Per-primitive reflectance toward the viewer.
template <class T>
Vec3<T> brdf_response(const GaussianPrimitive<T> &p, const Vec3<T> &normal, const Vec3<double> &sun,
                      const Vec3<T> &to_viewer) {
    const Vec3<T> s = sun.template cast<T>();
    const Vec3<T> r = reflect(s, normal);
    const T c = smax(r[0] * to_viewer[0] + r[1] * to_viewer[1] + r[2] * to_viewer[2], T(0));
    const T c2 = c * c;
    const T c4 = c2 * c2;
    const T lobe = p.brdf[3] * p.radiometric_bandwidth() * c4 * c4;
    return Vec3<T>(p.brdf[0] + lobe, p.brdf[1] + lobe, p.brdf[2] + lobe);
}

template <class T>
Vec3<T> composite_albedo(const PreparedView<T> &pv, const Composite<T> &comp, const Vec3<T> &normal,
                         const Vec3<double> &sun, const Vec3<T> &to_viewer) {
    Vec3<T> out = Vec3<T>::Zero();
    for (const auto &[i, w] : comp.weights) {
        const auto &p = pv.scene.slots->slots[pv.splats[i].slot];
        out += brdf_response(p, normal, sun, to_viewer) * w;
    }
    return out;
}

/// Unit world-space SDF normal at a world point; +z without an SDF.
template <class T>
Vec3<T> sdf_normal(const PreparedView<T> &pv, const Vec3<T> &world) {
    using std::sqrt;
    if (!pv.scene.sdf) return Vec3<T>(T(0), T(0), T(1));
    bool clamped = false;
    const Vec3<T> xn = clamp_to_box(pv.box.normalize(world), &clamped);
    const auto vg = eval_sdf_grad(*pv.scene.sdf, xn);
    const Vec3<double> h = pv.box.half();
    Vec3<T> g(vg.gradient[0] * T(1.0 / h[0]), vg.gradient[1] * T(1.0 / h[1]), vg.gradient[2] * T(1.0 / h[2]));
    const T n = sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + T(1e-18));
    return g / n;
}

template <class T>
Vec3<T> apply_sensor(const Vec3<T> &radiance, const Atmosphere<T> &atm, const SensorResponse<T> &sensor,
                     const Calibration<T> *calib) {
    using std::exp;
    using std::log;
    Vec3<T> out;
    for (int c = 0; c < 3; ++c) {
        T x = sensor.gain[c] * (atm.transmittance * radiance[c] + atm.haze[c]) + sensor.bias[c];
        x = sclamp(x, 0.0, 1.0);
        if (!(value(sensor.gamma) == 1.0 && is_zero_constant(sensor.gamma - T(1)))) {
            x = value(x) > 0.0 ? T(exp(log(x) / sensor.gamma)) : T(0);
        }
        if (calib) x = calib->g[c] * x + calib->b[c];
        out[c] = x;
    }
    return out;
}

template <class T>
struct PixelRender {
    Vec3<T> color;
    Vec3<T> albedo;
    T elevation;
    T shading;
    T shadow;
    T transmittance;
    bool sdf_miss = false;   // no surface along the ray
    bool sun_outside = false;  // homologous point left the sun view
};

template <class T>
struct ShadowSample {
    T coeff;
    T sun_elevation;
    bool outside = false;
};

/// Shadow coefficient for a ground point using the sun camera.
template <class T>
ShadowSample<T> shadow_at(const PreparedView<T> &sun_view, const Vec3<T> &ground, const T &elevation,
                          const SunModel &sun) {
    ShadowSample<T> out;
    const Vec2<T> hom = project(*sun_view.view, ground, static_cast<const Calibration<T> *>(nullptr), sun_view.box).pixel;
    const Vec2<double> hd = values(hom);
    if (hd[0] < 0.0 || hd[1] < 0.0 || hd[0] > sun_view.view->height || hd[1] > sun_view.view->width) {
        out.coeff = T(1);
        out.sun_elevation = elevation;
        out.outside = true;
        return out;
    }
    out.sun_elevation = render_elevation(sun_view, hom).elevation;
    out.coeff = shadow_coeff(out.sun_elevation, elevation, sun.sharpness);
    return out;
}

/// Full radiometric chain at continuous pixel u of `pv`.
template <class T>
PixelRender<T> render_pixel(const PreparedView<T> &pv, const std::type_identity_t<PreparedView<T>> *sun_view,
                            const SunModel &sun,
                            const Atmosphere<T> &atm, const SensorResponse<T> &sensor, const Vec2<T> &u) {
    PixelRender<T> out;
    const ElevationSample<T> e = render_elevation(pv, u);
    out.elevation = e.elevation;
    out.sdf_miss = !e.sdf.found;
    out.transmittance = e.comp.transmittance;
    const Vec3<T> ground = e.ray.at(e.altitude);
    const Vec3<T> n = sdf_normal(pv, ground);
    const Vec3<T> s = sun.direction.template cast<T>();
    out.shading = smax(n[0] * s[0] + n[1] * s[1] + n[2] * s[2], T(0));
    out.albedo = composite_albedo(pv, e.comp, n, sun.direction, e.ray.upward());
    out.shadow = T(1);
    if (sun_view) {
        const auto sh = shadow_at(*sun_view, ground, e.elevation, sun);
        out.shadow = sh.coeff;
        out.sun_outside = sh.outside;
    }
    const Vec3<T> radiance = out.albedo * (out.shading * out.shadow);
    const Calibration<T> *radiometric = pv.calib ? &*pv.calib : nullptr;
    out.color = apply_sensor(radiance, atm, sensor, radiometric);
    return out;
}

inline Vec2<double> pixel_center(int r, int c) { return {r + 0.5, c + 0.5}; }

/// Dense renders of every pixel of a view in double precision.
struct RenderedView {
    int height = 0;
    int width = 0;
    std::vector<double> rgb;        // height * width * 3
    std::vector<double> elevation;  // height * width
    std::vector<double> shadow;
    std::vector<double> transmittance;
    std::vector<std::uint8_t> valid;  // surface found along the ray
};

RenderedView render_view(const PreparedView<double> &pv, const PreparedView<double> *sun_view, const SunModel &sun,
                         const Atmosphere<double> &atm, const SensorResponse<double> &sensor, int threads = 1);
/// Elevation only.
RenderedView render_elevation_map(const PreparedView<double> &pv, int threads = 1);

}  // namespace swiftgs
