// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "swiftgs/math.hpp"

#include <algorithm>
#include <string>

namespace swiftgs {

inline constexpr int kDecoderHidden = 32;
inline constexpr int kSlotFields = 25;
inline constexpr int kDeltaDim = kDecoderHidden + kSlotFields;

/// Per-scene calibration: affine pixel correction (A, a), radiometric gain
/// and bias (g, b), scene elevation scale tau, and a small residual on the
/// slot decoder (delta: hidden-feature gains followed by output biases).
template <class T>
struct Calibration {
    Eigen::Matrix<T, 2, 3> A = Eigen::Matrix<T, 2, 3>::Zero();
    Vec2<T> a = Vec2<T>::Zero();
    Vec3<T> g = Vec3<T>::Ones();
    Vec3<T> b = Vec3<T>::Zero();
    T tau = T(1);
    VecX<T> delta = VecX<T>::Zero(kDeltaDim);

    static Calibration identity() { return Calibration(); }

    template <class U>
    Calibration<U> cast() const {
        Calibration<U> c;
        c.A = A.template cast<U>();
        c.a = a.template cast<U>();
        c.g = g.template cast<U>();
        c.b = b.template cast<U>();
        c.tau = U(tau);
        c.delta = delta.template cast<U>();
        return c;
    }

    template <class Self, class F>
    static void visit(Self &self, F &&f) {
        // A is stored column-major by Eigen; the visitor sees that layout.
        f(std::string("theta.A"), self.A.data(), std::size_t{6});
        f(std::string("theta.a"), self.a.data(), std::size_t{2});
        f(std::string("theta.g"), self.g.data(), std::size_t{3});
        f(std::string("theta.b"), self.b.data(), std::size_t{3});
        f(std::string("theta.tau"), &self.tau, std::size_t{1});
        f(std::string("theta.delta"), self.delta.data(), static_cast<std::size_t>(self.delta.size()));
    }
};

struct CalibrationBox {
    double a_matrix = 0.1;
    double a_offset = 5.0;
    double gain_lo = 0.5, gain_hi = 2.0;
    double bias = 0.2;
    double tau_lo = 0.5, tau_hi = 2.0;
    double delta = 1.0;
};

/// Clamps every entry into its valid range. Idempotent and non-expansive in max-norm.
inline void project_calibration(Calibration<double> &c, const CalibrationBox &box = {}) {
    for (int k = 0; k < 6; ++k) c.A.data()[k] = std::clamp(c.A.data()[k], -box.a_matrix, box.a_matrix);
    for (int k = 0; k < 2; ++k) c.a[k] = std::clamp(c.a[k], -box.a_offset, box.a_offset);
    for (int k = 0; k < 3; ++k) {
        c.g[k] = std::clamp(c.g[k], box.gain_lo, box.gain_hi);
        c.b[k] = std::clamp(c.b[k], -box.bias, box.bias);
    }
    c.tau = std::clamp(c.tau, box.tau_lo, box.tau_hi);
    for (Eigen::Index k = 0; k < c.delta.size(); ++k) c.delta[k] = std::clamp(c.delta[k], -box.delta, box.delta);
}

inline bool within_box(const Calibration<double> &c, const CalibrationBox &box = {}) {
    Calibration<double> p = c;
    project_calibration(p, box);
    return p.A == c.A && p.a == c.a && p.g == c.g && p.b == c.b && p.tau == c.tau && p.delta == c.delta;
}

}  // namespace swiftgs
