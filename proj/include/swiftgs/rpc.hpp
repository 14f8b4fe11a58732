// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
// Rational polynomial camera: ratio-of-cubics mapping normalized ground
// coordinates to normalized image coordinates. Monomials follow the RPC00B
// ordering. The synthetic scenes live in a local metric frame, so LONG maps to
// world x, LAT to world y and HEIGHT to world z.
#pragma once

#include "swiftgs/math.hpp"

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>

namespace swiftgs {

struct RpcMetadata {
    double line_off = 0.0, samp_off = 0.0, lat_off = 0.0, long_off = 0.0, height_off = 0.0;
    double line_scale = 1.0, samp_scale = 1.0, lat_scale = 1.0, long_scale = 1.0, height_scale = 1.0;
    std::array<double, 20> line_num{}, line_den{}, samp_num{}, samp_den{};

    bool operator==(const RpcMetadata &) const = default;
};

class RpcParseError : public std::runtime_error {
  public:
    RpcParseError(const std::string &what, int line, int column)
        : std::runtime_error("rpc:" + std::to_string(line) + ":" + std::to_string(column) + ": " + what),
          mLine(line), mColumn(column) {}
    int line() const { return mLine; }
    int column() const { return mColumn; }

  private:
    int mLine;
    int mColumn;
};

class DegenerateProjection : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Parses `KEY: value [unit]` lines. Blank lines and lines starting with '#' are skipped.
RpcMetadata parse_rpc(std::string_view text);
/// Writes every key with the shortest decimal form that round-trips.
std::string write_rpc(const RpcMetadata &rpc);
/// Throws std::invalid_argument unless denominators start with 1 and all scales are positive.
void validate_rpc(const RpcMetadata &rpc);

/// The 20 cubic monomials of (L, P, H) in RPC00B order, with partial derivatives.
template <class T>
void rpc_monomials(const T &l, const T &p, const T &h, T *m, T *dl = nullptr, T *dp = nullptr, T *dh = nullptr) {
    m[0] = T(1);
    m[1] = l;
    m[2] = p;
    m[3] = h;
    m[4] = l * p;
    m[5] = l * h;
    m[6] = p * h;
    m[7] = l * l;
    m[8] = p * p;
    m[9] = h * h;
    m[10] = p * l * h;
    m[11] = l * l * l;
    m[12] = l * p * p;
    m[13] = l * h * h;
    m[14] = l * l * p;
    m[15] = p * p * p;
    m[16] = p * h * h;
    m[17] = l * l * h;
    m[18] = p * p * h;
    m[19] = h * h * h;
    if (!dl) return;
    const T z(0);
    const T one(1);
    const T two(2);
    const T three(3);
    const T dL[20] = {z, one, z, z, p, h, z, two * l, z, z, p * h, three * l * l, p * p, h * h, two * l * p, z, z,
                      two * l * h, z, z};
    const T dP[20] = {z, z, one, z, l, z, h, z, two * p, z, l * h, z, two * l * p, z, l * l, three * p * p, h * h,
                      z, two * p * h, z};
    const T dH[20] = {z, z, z, one, z, l, p, z, z, two * h, p * l, z, z, two * l * h, z, z, two * p * h, l * l,
                      p * p, three * h * h};
    for (int k = 0; k < 20; ++k) {
        dl[k] = dL[k];
        dp[k] = dP[k];
        dh[k] = dH[k];
    }
}

template <class T>
struct RpcEval {
    Vec2<T> pixel;                       // (line, sample)
    Eigen::Matrix<T, 2, 3> jacobian;     // d pixel / d (x, y, z) in world meters
};

/// Projects a world point. Throws DegenerateProjection naming `view_name`
/// when a denominator is smaller than 1e-8 in magnitude.
template <class T>
RpcEval<T> rpc_project(const RpcMetadata &rpc, const Vec3<T> &world, const std::string &view_name = "rpc",
                       bool with_jacobian = true) {
    const T l = (world[0] - T(rpc.long_off)) * T(1.0 / rpc.long_scale);
    const T p = (world[1] - T(rpc.lat_off)) * T(1.0 / rpc.lat_scale);
    const T h = (world[2] - T(rpc.height_off)) * T(1.0 / rpc.height_scale);
    T m[20], dl[20], dp[20], dh[20];
    if (with_jacobian) {
        rpc_monomials(l, p, h, m, dl, dp, dh);
    } else {
        rpc_monomials(l, p, h, m);
    }
    auto poly = [&](const std::array<double, 20> &c, const T *basis) {
        T acc(0);
        for (int k = 0; k < 20; ++k) {
            if (c[k] != 0.0) acc += T(c[k]) * basis[k];
        }
        return acc;
    };
    const T ln = poly(rpc.line_num, m), ld = poly(rpc.line_den, m);
    const T sn = poly(rpc.samp_num, m), sd = poly(rpc.samp_den, m);
    if (std::abs(value(ld)) < 1e-8 || std::abs(value(sd)) < 1e-8) {
        throw DegenerateProjection("degenerate RPC denominator in view '" + view_name + "'");
    }
    RpcEval<T> out;
    out.pixel[0] = T(rpc.line_off) + T(rpc.line_scale) * ln / ld;
    out.pixel[1] = T(rpc.samp_off) + T(rpc.samp_scale) * sn / sd;
    if (with_jacobian) {
        const T *basis_d[3] = {dl, dp, dh};
        const double inv_scale[3] = {1.0 / rpc.long_scale, 1.0 / rpc.lat_scale, 1.0 / rpc.height_scale};
        for (int a = 0; a < 3; ++a) {
            const T dln = poly(rpc.line_num, basis_d[a]), dld = poly(rpc.line_den, basis_d[a]);
            const T dsn = poly(rpc.samp_num, basis_d[a]), dsd = poly(rpc.samp_den, basis_d[a]);
            out.jacobian(0, a) = T(rpc.line_scale * inv_scale[a]) * (dln * ld - ln * dld) / (ld * ld);
            out.jacobian(1, a) = T(rpc.samp_scale * inv_scale[a]) * (dsn * sd - sn * dsd) / (sd * sd);
        }
    }
    return out;
}

/// RPC that reproduces a world-to-pixel affine map exactly (linear numerators,
/// unit denominators), optionally with small cubic terms for curvature.
RpcMetadata rpc_from_affine(const Eigen::Matrix<double, 3, 4> &affine, const Vec3<double> &center,
                            const Vec3<double> &half_extent, double cubic = 0.0);

/// Multiplies every nonzero coefficient by (1 + sigma * n) with n drawn from N(0, 1).
/// Denominator constant terms stay at 1.
RpcMetadata perturb_rpc(const RpcMetadata &rpc, double sigma, Rng &rng);

}  // namespace swiftgs
