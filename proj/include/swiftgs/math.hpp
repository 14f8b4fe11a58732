// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "swiftgs/autodiff.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace swiftgs {

template <class T>
using Vec2 = Eigen::Matrix<T, 2, 1>;
template <class T>
using Vec3 = Eigen::Matrix<T, 3, 1>;
template <class T>
using Vec4 = Eigen::Matrix<T, 4, 1>;
template <class T>
using Mat2 = Eigen::Matrix<T, 2, 2>;
template <class T>
using Mat3 = Eigen::Matrix<T, 3, 3>;
template <class T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Seeded generator with platform-independent uniform and normal draws.
/// The engine is std::mt19937_64 (fully specified); the distribution
/// transforms are written out so that streams match across standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : mEngine(seed) {}
    static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
        return Rng(mix(mix(seed ^ 0x9e3779b97f4a7c15ULL) ^ mix(a + 0x632be59bd9b4e019ULL) ^ mix(b + 0x85ebca6bULL)));
    }

    std::uint64_t bits() { return mEngine(); }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(mEngine() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }
    double normal() {
        if (mHasSpare) {
            mHasSpare = false;
            return mSpare;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        mSpare = r * std::sin(2.0 * std::numbers::pi * u2);
        mHasSpare = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

  private:
    std::mt19937_64 mEngine;
    double mSpare = 0.0;
    bool mHasSpare = false;
};

/// Fully connected layer y = W x + b, W stored row-major.
template <class T>
struct Dense {
    MatX<T> weight;
    VecX<T> bias;

    Dense() = default;
    Dense(int out, int in) : weight(MatX<T>::Zero(out, in)), bias(VecX<T>::Zero(out)) {}

    int in() const { return static_cast<int>(weight.cols()); }
    int out() const { return static_cast<int>(weight.rows()); }

    VecX<T> operator()(const VecX<T> &x) const {
        VecX<T> y(out());
        for (int r = 0; r < out(); ++r) y[r] = dot_affine(weight.row(r).data(), x.data(), x.size(), bias[r]);
        return y;
    }

    /// Weight times a column without bias (used for tangent propagation).
    VecX<T> linear(const VecX<T> &x) const {
        VecX<T> y(out());
        for (int r = 0; r < out(); ++r) y[r] = dot_affine(weight.row(r).data(), x.data(), x.size(), T(0));
        return y;
    }

    template <class U>
    Dense<U> cast() const {
        Dense<U> d;
        d.weight = weight.template cast<U>();
        d.bias = bias.template cast<U>();
        return d;
    }

    /// Uniform in [-gain/sqrt(in), gain/sqrt(in)].
    void init_uniform(Rng &rng, double gain = 1.0) {
        const double bound = gain / std::sqrt(static_cast<double>(std::max(1, in())));
        for (int r = 0; r < out(); ++r) {
            for (int c = 0; c < in(); ++c) weight(r, c) = T(rng.uniform(-bound, bound));
        }
    }

    template <class Self, class F>
    static void visit_named(Self &self, const std::string &name, F &&f) {
        f(name + ".weight", self.weight.data(), static_cast<std::size_t>(self.weight.size()));
        f(name + ".bias", self.bias.data(), static_cast<std::size_t>(self.bias.size()));
    }
};

/// Largest singular value via power iteration on W^T W.
double operator_norm(const MatX<double> &w, int iterations = 200);

template <class T>
T softplus_act(const T &x) {
    return softplus(x);
}

template <class T>
VecX<T> softplus_vec(const VecX<T> &x) {
    VecX<T> y(x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) y[k] = softplus(x[k]);
    return y;
}

template <class T>
VecX<T> tanh_vec(const VecX<T> &x) {
    using std::tanh;
    VecX<T> y(x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) y[k] = tanh(x[k]);
    return y;
}

template <class T>
VecX<T> concat(const VecX<T> &a, const VecX<T> &b) {
    VecX<T> out(a.size() + b.size());
    out << a, b;
    return out;
}

/// Rotation matrix of a (w, x, y, z) quaternion assumed to be of unit norm.
template <class T>
Mat3<T> rotation_from_quaternion(const Vec4<T> &q) {
    const T w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3<T> r;
    r(0, 0) = T(1) - T(2) * (y * y + z * z);
    r(0, 1) = T(2) * (x * y - w * z);
    r(0, 2) = T(2) * (x * z + w * y);
    r(1, 0) = T(2) * (x * y + w * z);
    r(1, 1) = T(1) - T(2) * (x * x + z * z);
    r(1, 2) = T(2) * (y * z - w * x);
    r(2, 0) = T(2) * (x * z - w * y);
    r(2, 1) = T(2) * (y * z + w * x);
    r(2, 2) = T(1) - T(2) * (x * x + y * y);
    return r;
}

/// Quaternion (w, x, y, z) of a proper rotation matrix.
Vec4<double> quaternion_from_rotation(const Mat3<double> &r);

template <class T>
Vec4<T> normalized_quaternion(const Vec4<T> &q) {
    using std::sqrt;
    const T n = sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    return q / n;
}

template <class T>
T logsumexp(std::span<const T> xs) {
    using std::exp;
    using std::log;
    double m = -std::numeric_limits<double>::infinity();
    for (const T &x : xs) m = std::max(m, value(x));
    if (!std::isfinite(m)) return T(m);
    T acc(0);
    for (const T &x : xs) {
        if (std::isinf(value(x))) continue;
        acc += exp(x - T(m));
    }
    return T(m) + log(acc);
}

}  // namespace swiftgs
