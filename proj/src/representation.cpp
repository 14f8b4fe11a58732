// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "swiftgs/representation.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <algorithm>
#include <numeric>

namespace swiftgs {

double operator_norm(const MatX<double> &w, int iterations) {
    if (w.size() == 0) return 0.0;
    Eigen::VectorXd v = Eigen::VectorXd::Ones(w.cols()) / std::sqrt(static_cast<double>(w.cols()));
    double sigma = 0.0;
    for (int it = 0; it < iterations; ++it) {
        Eigen::VectorXd u = w * v;
        Eigen::VectorXd next = w.transpose() * u;
        const double n = next.norm();
        if (n == 0.0) return 0.0;
        v = next / n;
        sigma = std::sqrt(n);
    }
    // Power iteration converges from below; the exact value comes from an SVD
    // of the small Gram matrix when it is cheap enough.
    if (w.cols() <= 128) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w.transpose() * w);
        sigma = std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
    }
    return sigma;
}

Vec4<double> quaternion_from_rotation(const Mat3<double> &r) {
    Eigen::Quaterniond q(r);
    q.normalize();
    Vec4<double> out(q.w(), q.x(), q.y(), q.z());
    if (out[0] < 0.0) out = -out;
    return out;
}

SdfField<double> make_sdf(int layers, int width, int frequencies, int conditioning_dim) {
    if (layers < 2) throw std::invalid_argument("make_sdf: at least two layers required");
    SdfField<double> sdf;
    sdf.frequencies = frequencies;
    sdf.conditioning = VecX<double>::Zero(conditioning_dim);
    const int enc = sdf.encoded_dim();
    const int skip = (layers + 1) / 2;
    for (int l = 0; l < layers; ++l) {
        int in = l == 0 ? enc : width;
        if (l == skip) in += enc;
        const int out = l + 1 == layers ? 1 : width;
        sdf.layers.emplace_back(out, in);
    }
    return sdf;
}

void init_sdf(SdfField<double> &sdf, Rng &rng) {
    for (auto &l : sdf.layers) l.init_uniform(rng);
}

SdfField<double> make_plane_sdf(int layers, int width, int frequencies, int conditioning_dim, double level) {
    SdfField<double> sdf = make_sdf(layers, width, frequencies, conditioning_dim);
    // Units 0 and 1 of each hidden layer carry +t and -t through softplus; the
    // next layer recovers t = softplus(t) - softplus(-t).
    if (width < 2) throw std::invalid_argument("make_plane_sdf: width must be at least 2");
    const int n = static_cast<int>(sdf.layers.size());
    for (int l = 0; l < n; ++l) {
        auto &d = sdf.layers[l];
        if (l == 0) {
            d.weight(0, 2) = 1.0;
            d.bias[0] = -level;
            if (n > 1) {
                d.weight(1, 2) = -1.0;
                d.bias[1] = level;
            }
        } else if (l + 1 < n) {
            d.weight(0, 0) = 1.0;
            d.weight(0, 1) = -1.0;
            d.weight(1, 0) = -1.0;
            d.weight(1, 1) = 1.0;
        } else {
            d.weight(0, 0) = 1.0;
            d.weight(0, 1) = -1.0;
        }
    }
    return sdf;
}

GateField<double> make_gate(int width) {
    GateField<double> g;
    g.hidden = Dense<double>(width, kLatentDim + 3);
    g.out = Dense<double>(1, width);
    return g;
}

void init_gate(GateField<double> &gate, Rng &rng) {
    gate.hidden.init_uniform(rng);
    gate.out.init_uniform(rng);
}

double gate_lipschitz_bound(const GateField<double> &gate) {
    return operator_norm(gate.hidden.weight) * operator_norm(gate.out.weight) * 0.25;
}

std::size_t prune(SlotSet<double> &slots, double alpha_min) {
    if (!(alpha_min > 0.0 && alpha_min < 1.0)) throw std::invalid_argument("prune: alpha_min must lie in (0, 1)");
    std::size_t removed = 0;
    for (std::size_t k = 0; k < slots.capacity(); ++k) {
        if (slots.active[k] && slots.slots[k].opacity() < alpha_min) {
            slots.active[k] = 0;
            ++removed;
        }
    }
    return removed;
}

namespace {

Mat3<double> covariance(const GaussianPrimitive<double> &p) { return covariance_from_factors(p.geom); }

double logit(double a) {
    a = std::clamp(a, 1e-12, 1.0 - 1e-12);
    return std::log(a / (1.0 - a));
}

CovarianceFactors<double> factors_from_covariance(const Mat3<double> &cov) {
    Eigen::SelfAdjointEigenSolver<Mat3<double>> es(cov);
    Mat3<double> v = es.eigenvectors();
    if (v.determinant() < 0.0) v.col(0) = -v.col(0);
    CovarianceFactors<double> f;
    f.rotation = quaternion_from_rotation(v);
    for (int a = 0; a < 3; ++a) f.log_scales[a] = 0.5 * std::log(std::max(es.eigenvalues()[a], 1e-300));
    return f;
}

}  // namespace

double symmetric_kl(const GaussianPrimitive<double> &a, const GaussianPrimitive<double> &b) {
    const Mat3<double> sa = covariance(a);
    const Mat3<double> sb = covariance(b);
    const Mat3<double> pa = precision_from_factors(a.geom);
    const Mat3<double> pb = precision_from_factors(b.geom);
    const Vec3<double> d = a.center - b.center;
    // KL(a||b) + KL(b||a); log-determinants cancel.
    const double tr = (pb * sa).trace() + (pa * sb).trace();
    const double q = d.dot((pa + pb) * d);
    return 0.5 * (tr + q) - 3.0;
}

GaussianPrimitive<double> merge_primitives(const GaussianPrimitive<double> &a, const GaussianPrimitive<double> &b) {
    const double wa = a.opacity();
    const double wb = b.opacity();
    const double wsum = wa + wb;
    const double ta = wsum > 0.0 ? wa / wsum : 0.5;
    const double tb = 1.0 - ta;
    GaussianPrimitive<double> m = a;
    m.center = ta * a.center + tb * b.center;
    const Vec3<double> da = a.center - m.center;
    const Vec3<double> db = b.center - m.center;
    const Mat3<double> cov =
        ta * (covariance(a) + da * da.transpose()) + tb * (covariance(b) + db * db.transpose());
    m.geom = factors_from_covariance(0.5 * (cov + cov.transpose()));
    const Mat3<double> rcov = ta * covariance_from_factors(a.radio) + tb * covariance_from_factors(b.radio);
    m.radio = factors_from_covariance(0.5 * (rcov + rcov.transpose()));
    m.opacity_logit = logit(1.0 - (1.0 - wa) * (1.0 - wb));
    m.brdf = ta * a.brdf + tb * b.brdf;
    m.appearance = ta * a.appearance + tb * b.appearance;
    return m;
}

std::pair<GaussianPrimitive<double>, GaussianPrimitive<double>> split_primitive(const GaussianPrimitive<double> &p) {
    int axis = 0;
    for (int a = 1; a < 3; ++a) {
        if (p.geom.log_scales[a] > p.geom.log_scales[axis]) axis = a;
    }
    const Mat3<double> r = rotation_from_quaternion(p.geom.rotation);
    const Vec3<double> offset = 0.5 * std::exp(p.geom.log_scales[axis]) * r.col(axis);
    GaussianPrimitive<double> c0 = p;
    GaussianPrimitive<double> c1 = p;
    c0.center = p.center + offset;
    c1.center = p.center - offset;
    c0.geom.log_scales[axis] -= std::log(2.0);
    c1.geom.log_scales[axis] -= std::log(2.0);
    return {c0, c1};
}

SplitMergeReport split_merge(SlotSet<double> &slots, std::span<const double> residual_per_slot,
                             const SplitMergeConfig &config) {
    if (residual_per_slot.size() != slots.capacity()) {
        throw std::invalid_argument("split_merge: one residual per slot required");
    }
    SplitMergeReport report;
    // Merges first so that freed slots can host children.
    const std::size_t k_max = slots.capacity();
    for (std::size_t i = 0; i < k_max; ++i) {
        if (!slots.active[i]) continue;
        for (std::size_t j = i + 1; j < k_max; ++j) {
            if (!slots.active[j]) continue;
            if (symmetric_kl(slots.slots[i], slots.slots[j]) < config.merge_threshold) {
                slots.slots[i] = merge_primitives(slots.slots[i], slots.slots[j]);
                slots.active[j] = 0;
                ++report.merges;
            }
        }
    }
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < k_max; ++i) {
        if (slots.active[i] && residual_per_slot[i] > config.split_threshold) candidates.push_back(i);
    }
    for (std::size_t i : candidates) {
        auto free = std::find(slots.active.begin(), slots.active.end(), std::uint8_t{0});
        if (free == slots.active.end()) {
            report.skipped_splits.push_back(i);
            continue;
        }
        auto [c0, c1] = split_primitive(slots.slots[i]);
        slots.slots[i] = c0;
        const auto f = static_cast<std::size_t>(free - slots.active.begin());
        slots.slots[f] = c1;
        slots.active[f] = 1;
        ++report.splits;
    }
    return report;
}

}  // namespace swiftgs
