// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "swiftgs/renderer.hpp"

#include <Eigen/Geometry>

#include <thread>

namespace swiftgs {

void ViewGeometry::validate() const {
    if (kind == Kind::Rpc) {
        if (!rpc) throw std::invalid_argument("view '" + name + "': RPC kind without metadata");
        validate_rpc(*rpc);
    } else {
        if (rpc) throw std::invalid_argument("view '" + name + "': affine kind with RPC metadata attached");
        if (affine.row(2).head<3>().norm() == 0.0) {
            throw std::invalid_argument("view '" + name + "': affine depth axis has zero norm");
        }
    }
    if (height <= 0 || width <= 0) throw std::invalid_argument("view '" + name + "': empty image");
}

void SunModel::validate() const {
    if (std::abs(direction.norm() - 1.0) > 1e-9) throw std::invalid_argument("sun direction must be a unit vector");
    if (!(direction[2] > 0.0)) throw std::invalid_argument("sun must be above the horizon");
    if (!(sharpness >= 0.0)) throw std::invalid_argument("shadow sharpness must be nonnegative");
}

ViewGeometry make_affine_view(const Eigen::Matrix<double, 3, 4> &m, int height, int width, double gsd,
                              std::string name) {
    ViewGeometry v;
    v.kind = ViewGeometry::Kind::Affine;
    v.affine = m;
    v.height = height;
    v.width = width;
    v.gsd = gsd;
    v.name = std::move(name);
    v.validate();
    return v;
}

ViewGeometry make_satellite_view(const SceneBox &box, const Vec3<double> &toward_sensor, int height, int width,
                                 std::string name) {
    const Vec3<double> d = toward_sensor.normalized();
    if (!(d[2] > 0.0)) throw std::invalid_argument("make_satellite_view: sensor must look down");
    const double cr = (box.hi[0] - box.lo[0]) / height;
    const double cc = (box.hi[1] - box.lo[1]) / width;
    Eigen::Matrix<double, 3, 4> m = Eigen::Matrix<double, 3, 4>::Zero();
    // Project along d onto z = 0, then scale the plane into pixels.
    m(0, 0) = 1.0 / cr;
    m(0, 2) = -d[0] / d[2] / cr;
    m(0, 3) = -box.lo[0] / cr;
    m(1, 1) = 1.0 / cc;
    m(1, 2) = -d[1] / d[2] / cc;
    m(1, 3) = -box.lo[1] / cc;
    m.row(2).head<3>() = -d.transpose();
    return make_affine_view(m, height, width, std::sqrt(cr * cc), std::move(name));
}

ViewGeometry make_sun_view(const SceneBox &box, const Vec3<double> &sun, double cell, std::string name) {
    const Vec3<double> s = sun.normalized();
    if (!(s[2] > 0.0)) throw std::invalid_argument("make_sun_view: sun below horizon");
    const Vec3<double> e1 = Vec3<double>::UnitY().cross(s).normalized();
    const Vec3<double> e2 = s.cross(e1);
    double lo[2] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    double hi[2] = {-lo[0], -lo[1]};
    for (int corner = 0; corner < 8; ++corner) {
        const Vec3<double> p((corner & 1) ? box.hi[0] : box.lo[0], (corner & 2) ? box.hi[1] : box.lo[1],
                             (corner & 4) ? box.hi[2] : box.lo[2]);
        const double a = e1.dot(p) / cell;
        const double b = e2.dot(p) / cell;
        lo[0] = std::min(lo[0], a);
        hi[0] = std::max(hi[0], a);
        lo[1] = std::min(lo[1], b);
        hi[1] = std::max(hi[1], b);
    }
    Eigen::Matrix<double, 3, 4> m;
    m.row(0) << e1.transpose() / cell, -lo[0];
    m.row(1) << e2.transpose() / cell, -lo[1];
    m.row(2) << -s.transpose(), 0.0;
    const int h = static_cast<int>(std::ceil(hi[0] - lo[0]));
    const int w = static_cast<int>(std::ceil(hi[1] - lo[1]));
    return make_affine_view(m, std::max(h, 1), std::max(w, 1), cell, std::move(name));
}

namespace {

template <class F>
void parallel_rows(int rows, int threads, F &&f) {
    threads = std::max(1, std::min(threads, rows));
    if (threads == 1) {
        for (int r = 0; r < rows; ++r) f(r);
        return;
    }
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (int r = t; r < rows; r += threads) f(r);
        });
    }
    for (auto &th : pool) th.join();
}

RenderedView allocate(const ViewGeometry &v) {
    RenderedView out;
    out.height = v.height;
    out.width = v.width;
    const auto n = static_cast<std::size_t>(v.height) * v.width;
    out.rgb.assign(n * 3, 0.0);
    out.elevation.assign(n, 0.0);
    out.shadow.assign(n, 1.0);
    out.transmittance.assign(n, 1.0);
    out.valid.assign(n, 0);
    return out;
}

}  // namespace

RenderedView render_view(const PreparedView<double> &pv, const PreparedView<double> *sun_view, const SunModel &sun,
                         const Atmosphere<double> &atm, const SensorResponse<double> &sensor, int threads) {
    RenderedView out = allocate(*pv.view);
    parallel_rows(out.height, threads, [&](int r) {
        for (int c = 0; c < out.width; ++c) {
            const auto px = render_pixel(pv, sun_view, sun, atm, sensor, pixel_center(r, c));
            const auto i = static_cast<std::size_t>(r) * out.width + c;
            for (int ch = 0; ch < 3; ++ch) out.rgb[i * 3 + ch] = px.color[ch];
            out.elevation[i] = px.elevation;
            out.shadow[i] = px.shadow;
            out.transmittance[i] = px.transmittance;
            out.valid[i] = (!px.sdf_miss || px.transmittance < 0.5) ? 1 : 0;
        }
    });
    return out;
}

RenderedView render_elevation_map(const PreparedView<double> &pv, int threads) {
    RenderedView out = allocate(*pv.view);
    out.rgb.clear();
    parallel_rows(out.height, threads, [&](int r) {
        for (int c = 0; c < out.width; ++c) {
            const auto e = render_elevation(pv, pixel_center(r, c));
            const auto i = static_cast<std::size_t>(r) * out.width + c;
            out.elevation[i] = e.elevation;
            out.transmittance[i] = e.comp.transmittance;
            out.valid[i] = (e.sdf.found || e.comp.transmittance < 0.5) ? 1 : 0;
        }
    });
    return out;
}

}  // namespace swiftgs
