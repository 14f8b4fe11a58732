// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
// Hybrid scene representation: anisotropic Gaussian primitives with decoupled
// geometric and radiometric covariances, a coordinate-network signed distance
// field, and the spatial gate that blends the two densities.
#pragma once

#include "swiftgs/math.hpp"

#include <optional>
#include <string>
#include <vector>

namespace swiftgs {

/// Axis-aligned scene box in world meters; the networks see [-1, 1]^3.
struct SceneBox {
    Vec3<double> lo{0.0, 0.0, -8.0};
    Vec3<double> hi{256.0, 256.0, 56.0};

    Vec3<double> center() const { return 0.5 * (lo + hi); }
    Vec3<double> half() const { return 0.5 * (hi - lo); }

    template <class T>
    Vec3<T> normalize(const Vec3<T> &p) const {
        Vec3<T> out;
        for (int a = 0; a < 3; ++a) out[a] = (p[a] - T(center()[a])) * T(1.0 / half()[a]);
        return out;
    }
    template <class T>
    Vec3<T> denormalize(const Vec3<T> &x) const {
        Vec3<T> out;
        for (int a = 0; a < 3; ++a) out[a] = x[a] * T(half()[a]) + T(center()[a]);
        return out;
    }
};

template <class T>
struct CovarianceFactors {
    Vec4<T> rotation = Vec4<T>(T(1), T(0), T(0), T(0));  // (w, x, y, z)
    Vec3<T> log_scales = Vec3<T>::Zero();

    template <class U>
    CovarianceFactors<U> cast() const {
        return {rotation.template cast<U>(), log_scales.template cast<U>()};
    }
    void renormalize() { rotation = normalized_quaternion(rotation); }

    template <class Self, class F>
    static void visit_named(Self &self, const std::string &name, F &&f) {
        f(name + ".rotation", self.rotation.data(), std::size_t{4});
        f(name + ".log_scales", self.log_scales.data(), std::size_t{3});
    }
};

/// R diag(exp(log_scales))^2 R^T.
template <class T>
Mat3<T> covariance_from_factors(const CovarianceFactors<T> &f) {
    using std::exp;
    const Mat3<T> r = rotation_from_quaternion(f.rotation);
    Mat3<T> out;
    Vec3<T> var;
    for (int a = 0; a < 3; ++a) var[a] = exp(T(2) * f.log_scales[a]);
    for (int i = 0; i < 3; ++i) {
        for (int j = i; j < 3; ++j) {
            T acc(0);
            for (int a = 0; a < 3; ++a) acc += r(i, a) * var[a] * r(j, a);
            out(i, j) = acc;
            out(j, i) = acc;
        }
    }
    return out;
}

/// Inverse covariance R diag(exp(-2 log_scales)) R^T.
template <class T>
Mat3<T> precision_from_factors(const CovarianceFactors<T> &f) {
    using std::exp;
    const Mat3<T> r = rotation_from_quaternion(f.rotation);
    Mat3<T> out;
    Vec3<T> inv;
    for (int a = 0; a < 3; ++a) inv[a] = exp(T(-2) * f.log_scales[a]);
    for (int i = 0; i < 3; ++i) {
        for (int j = i; j < 3; ++j) {
            T acc(0);
            for (int a = 0; a < 3; ++a) acc += r(i, a) * inv[a] * r(j, a);
            out(i, j) = acc;
            out(j, i) = acc;
        }
    }
    return out;
}

inline constexpr int kAppearanceDim = 8;

template <class T>
struct GaussianPrimitive {
    Vec3<T> center = Vec3<T>::Zero();
    CovarianceFactors<T> geom;
    CovarianceFactors<T> radio;
    T opacity_logit = T(0);
    Vec4<T> brdf = Vec4<T>(T(0.5), T(0.5), T(0.5), T(0));  // albedo rgb, specular weight
    VecX<T> appearance = VecX<T>::Zero(kAppearanceDim);

    T opacity() const { return sigmoid(opacity_logit); }

    /// Scalar in (0, 1) derived from the radiometric covariance; broad
    /// radiometric support means a sharper specular lobe contribution.
    T radiometric_bandwidth() const {
        return sigmoid(-(radio.log_scales[0] + radio.log_scales[1] + radio.log_scales[2]) * T(1.0 / 3.0));
    }

    template <class U>
    GaussianPrimitive<U> cast() const {
        GaussianPrimitive<U> p;
        p.center = center.template cast<U>();
        p.geom = geom.template cast<U>();
        p.radio = radio.template cast<U>();
        p.opacity_logit = U(opacity_logit);
        p.brdf = brdf.template cast<U>();
        p.appearance = appearance.template cast<U>();
        return p;
    }

    template <class Self, class F>
    static void visit_named(Self &self, const std::string &name, F &&f) {
        f(name + ".center", self.center.data(), std::size_t{3});
        decltype(self.geom)::visit_named(self.geom, name + ".geom", f);
        decltype(self.radio)::visit_named(self.radio, name + ".radio", f);
        f(name + ".opacity_logit", &self.opacity_logit, std::size_t{1});
        f(name + ".brdf", self.brdf.data(), std::size_t{4});
        f(name + ".appearance", self.appearance.data(), static_cast<std::size_t>(self.appearance.size()));
    }
    template <class Self, class F>
    static void visit(Self &self, F &&f) {
        visit_named(self, "slot", f);
    }
};

template <class T>
struct SlotSet {
    std::vector<GaussianPrimitive<T>> slots;  // size == capacity
    std::vector<std::uint8_t> active;

    SlotSet() = default;
    explicit SlotSet(std::size_t capacity) : slots(capacity), active(capacity, 0) {}

    std::size_t capacity() const { return slots.size(); }
    std::size_t active_count() const {
        std::size_t n = 0;
        for (auto a : active) n += a ? 1 : 0;
        return n;
    }
    /// Activates the first free slot with `p`; returns its index or nullopt when full.
    std::optional<std::size_t> insert(const GaussianPrimitive<T> &p) {
        for (std::size_t k = 0; k < capacity(); ++k) {
            if (!active[k]) {
                slots[k] = p;
                active[k] = 1;
                return k;
            }
        }
        return std::nullopt;
    }

    template <class U>
    SlotSet<U> cast() const {
        SlotSet<U> s;
        s.slots.reserve(slots.size());
        for (const auto &p : slots) s.slots.push_back(p.template cast<U>());
        s.active = active;
        return s;
    }

    template <class Self, class F>
    static void visit(Self &self, F &&f) {
        for (std::size_t k = 0; k < self.slots.size(); ++k) {
            using P = std::remove_cvref_t<decltype(self.slots[k])>;
            P::visit_named(self.slots[k], "slots[" + std::to_string(k) + "]", f);
        }
    }
};

inline constexpr int kLatentDim = 32;

/// Coordinate network S(x) over normalized coordinates. Input is the
/// positional encoding of x concatenated with a per-scene conditioning code;
/// the encoded input is re-injected at layer ceil(L/2).
template <class T>
struct SdfField {
    std::vector<Dense<T>> layers;  // L linear layers, the last maps to a scalar
    int frequencies = 4;
    VecX<T> conditioning;  // fixed by the predictor; empty means none

    int encoded_dim() const { return 3 + 6 * frequencies + static_cast<int>(conditioning.size()); }
    int skip_layer() const { return (static_cast<int>(layers.size()) + 1) / 2; }

    template <class U>
    SdfField<U> cast() const {
        SdfField<U> s;
        for (const auto &l : layers) s.layers.push_back(l.template cast<U>());
        s.frequencies = frequencies;
        s.conditioning = conditioning.template cast<U>();
        return s;
    }

    template <class Self, class F>
    static void visit_named(Self &self, const std::string &name, F &&f) {
        for (std::size_t k = 0; k < self.layers.size(); ++k) {
            using D = std::remove_cvref_t<decltype(self.layers[k])>;
            D::visit_named(self.layers[k], name + ".layers[" + std::to_string(k) + "]", f);
        }
    }
    template <class Self, class F>
    static void visit(Self &self, F &&f) {
        visit_named(self, "sdf", f);
    }
};

/// Allocates an SDF network with L layers of width W for `conditioning_dim` extra inputs.
SdfField<double> make_sdf(int layers, int width, int frequencies, int conditioning_dim);
void init_sdf(SdfField<double> &sdf, Rng &rng);
/// Network whose output is exactly z_norm - level (uses softplus(t) - softplus(-t) = t).
SdfField<double> make_plane_sdf(int layers, int width, int frequencies, int conditioning_dim, double level);

template <class T>
VecX<T> sdf_encode(const SdfField<T> &sdf, const Vec3<T> &x) {
    using std::cos;
    using std::sin;
    VecX<T> in(sdf.encoded_dim());
    int k = 0;
    for (int a = 0; a < 3; ++a) in[k++] = x[a];
    for (int f = 0; f < sdf.frequencies; ++f) {
        const double w = std::ldexp(std::numbers::pi, f);
        for (int a = 0; a < 3; ++a) {
            in[k++] = sin(T(w) * x[a]);
            in[k++] = cos(T(w) * x[a]);
        }
    }
    for (Eigen::Index c = 0; c < sdf.conditioning.size(); ++c) in[k++] = sdf.conditioning[c];
    return in;
}

template <class T>
Vec3<T> clamp_to_box(const Vec3<T> &x, bool *clamped) {
    Vec3<T> y;
    bool c = false;
    for (int a = 0; a < 3; ++a) {
        y[a] = sclamp(x[a], -1.0, 1.0);
        c = c || (y[a] != x[a]);
    }
    if (clamped) *clamped = c;
    return y;
}

/// Signed distance in normalized units at x in [-1, 1]^3. Points outside the
/// box are clamped onto it and `clamped` is set.
template <class T>
T eval_sdf(const SdfField<T> &sdf, const Vec3<T> &x_in, bool *clamped = nullptr) {
    const Vec3<T> x = clamp_to_box(x_in, clamped);
    const VecX<T> in = sdf_encode(sdf, x);
    VecX<T> h = in;
    const int n = static_cast<int>(sdf.layers.size());
    for (int l = 0; l < n; ++l) {
        if (l == sdf.skip_layer() && l > 0) h = concat(h, in);
        h = sdf.layers[l](h);
        if (l + 1 < n) h = softplus_vec(h);
    }
    return h[0];
}

template <class T>
struct SdfValueGrad {
    T value;
    Vec3<T> gradient;  // w.r.t. normalized coordinates
};

/// Value and spatial gradient by forward tangent propagation (no clamping).
template <class T>
SdfValueGrad<T> eval_sdf_grad(const SdfField<T> &sdf, const Vec3<T> &x) {
    using std::cos;
    using std::sin;
    const VecX<T> in = sdf_encode(sdf, x);
    std::array<VecX<T>, 3> din;
    for (int a = 0; a < 3; ++a) din[a] = VecX<T>::Zero(in.size());
    int k = 0;
    for (int a = 0; a < 3; ++a) din[a][k++] = T(1);
    for (int f = 0; f < sdf.frequencies; ++f) {
        const double w = std::ldexp(std::numbers::pi, f);
        for (int a = 0; a < 3; ++a) {
            din[a][k] = in[k + 1] * T(w);   // d sin(wx) = w cos(wx)
            din[a][k + 1] = -in[k] * T(w);  // d cos(wx) = -w sin(wx)
            k += 2;
        }
    }
    VecX<T> h = in;
    std::array<VecX<T>, 3> dh = din;
    const int n = static_cast<int>(sdf.layers.size());
    for (int l = 0; l < n; ++l) {
        if (l == sdf.skip_layer() && l > 0) {
            h = concat(h, in);
            for (int a = 0; a < 3; ++a) dh[a] = concat(dh[a], din[a]);
        }
        VecX<T> pre = sdf.layers[l](h);
        std::array<VecX<T>, 3> dpre;
        for (int a = 0; a < 3; ++a) dpre[a] = sdf.layers[l].linear(dh[a]);
        if (l + 1 < n) {
            VecX<T> act(pre.size());
            for (Eigen::Index u = 0; u < pre.size(); ++u) {
                act[u] = softplus(pre[u]);
                const T s = sigmoid(pre[u]);
                for (int a = 0; a < 3; ++a) dpre[a][u] = dpre[a][u] * s;
            }
            h = act;
        } else {
            h = pre;
        }
        dh = dpre;
    }
    return {h[0], Vec3<T>(dh[0][0], dh[1][0], dh[2][0])};
}

/// Two-layer perceptron [z_scene; x_norm] -> logit, squashed by a sigmoid.
template <class T>
struct GateField {
    Dense<T> hidden;
    Dense<T> out;

    template <class U>
    GateField<U> cast() const {
        return {hidden.template cast<U>(), out.template cast<U>()};
    }
    template <class Self, class F>
    static void visit_named(Self &self, const std::string &name, F &&f) {
        decltype(self.hidden)::visit_named(self.hidden, name + ".hidden", f);
        decltype(self.out)::visit_named(self.out, name + ".out", f);
    }
    template <class Self, class F>
    static void visit(Self &self, F &&f) {
        visit_named(self, "gate", f);
    }
};

GateField<double> make_gate(int width);
void init_gate(GateField<double> &gate, Rng &rng);

template <class T>
T gate_logit(const VecX<T> &z_scene, const Vec3<T> &x_norm, const GateField<T> &gate) {
    VecX<T> in(z_scene.size() + 3);
    in << z_scene, x_norm;
    return gate.out(softplus_vec(gate.hidden(in)))[0];
}

template <class T>
T eval_gate(const VecX<T> &z_scene, const Vec3<T> &x_norm, const GateField<T> &gate) {
    return sigmoid(gate_logit(z_scene, x_norm, gate));
}

/// Upper bound on the gate's Lipschitz constant in its input: prod ||W|| / 4.
double gate_lipschitz_bound(const GateField<double> &gate);

inline constexpr double kDensityTemperature = 0.05;

/// sum_k alpha_k exp(-1/2 (x - mu_k)^T Sigma_k^-1 (x - mu_k)) over active slots.
template <class T>
T gaussian_density(const Vec3<T> &x, const SlotSet<T> &slots) {
    T acc(0);
    for (std::size_t k = 0; k < slots.capacity(); ++k) {
        if (!slots.active[k]) continue;
        const auto &p = slots.slots[k];
        const Vec3<T> d = x - p.center;
        const Mat3<T> prec = precision_from_factors(p.geom);
        T q(0);
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) q += d[i] * prec(i, j) * d[j];
        }
        using std::exp;
        acc += p.opacity() * exp(T(-0.5) * q);
    }
    return acc;
}

template <class T>
T sdf_density(const SdfField<T> &sdf, const Vec3<T> &x_norm, double temperature = kDensityTemperature) {
    return sigmoid(-eval_sdf(sdf, x_norm) * T(1.0 / temperature));
}

template <class T>
struct HybridSample {
    T density;
    T gaussian;
    T sdf;
    T gate;
};

/// lambda(x) W_gauss(x) + (1 - lambda(x)) W_sdf(x) at a world point. A forced
/// gate value replaces the gate network (used to probe the endpoints).
template <class T>
HybridSample<T> eval_hybrid(const Vec3<T> &x_world, const SlotSet<T> &slots, const SdfField<T> &sdf,
                            const GateField<T> &gate, const VecX<T> &z_scene, const SceneBox &box,
                            std::optional<double> forced_gate = std::nullopt) {
    const Vec3<T> xn = box.normalize(x_world);
    HybridSample<T> s;
    s.gaussian = gaussian_density(x_world, slots);
    s.sdf = sdf_density(sdf, xn);
    s.gate = forced_gate ? T(*forced_gate) : eval_gate(z_scene, xn, gate);
    if (forced_gate && *forced_gate == 1.0) {
        s.density = s.gaussian;
    } else if (forced_gate && *forced_gate == 0.0) {
        s.density = s.sdf;
    } else {
        s.density = s.gate * s.gaussian + (T(1) - s.gate) * s.sdf;
    }
    return s;
}

/// Deactivates every active slot whose opacity is below `alpha_min`.
/// Returns the number of slots deactivated.
std::size_t prune(SlotSet<double> &slots, double alpha_min);

struct SplitMergeConfig {
    double split_threshold = 0.05;
    double merge_threshold = 0.1;  // symmetric KL
};

struct SplitMergeReport {
    std::size_t splits = 0;
    std::size_t merges = 0;
    std::vector<std::size_t> skipped_splits;  // no free slot
};

/// Symmetric (Jeffreys) KL divergence between two geometric Gaussians.
double symmetric_kl(const GaussianPrimitive<double> &a, const GaussianPrimitive<double> &b);

/// Moment-matched merge of two primitives, weighted by opacity.
GaussianPrimitive<double> merge_primitives(const GaussianPrimitive<double> &a, const GaussianPrimitive<double> &b);

/// Two children displaced by +/- half a standard deviation along the largest
/// geometric axis, with that axis' log-scale reduced by ln 2.
std::pair<GaussianPrimitive<double>, GaussianPrimitive<double>> split_primitive(const GaussianPrimitive<double> &p);

SplitMergeReport split_merge(SlotSet<double> &slots, std::span<const double> residual_per_slot,
                             const SplitMergeConfig &config);

}  // namespace swiftgs
