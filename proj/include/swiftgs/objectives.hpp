// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
// Loss terms. Rendered quantities are templated so the same code evaluates
// plain values and records gradients; references and teachers are constants.
#pragma once

#include "swiftgs/representation.hpp"

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace swiftgs {

struct LossWeights {
    double lpips = 0.1;
    double reproj = 1.0;
    double dsm = 2.0;
    double distill = 1.0;
    double sdf = 0.5;
    double load = 0.01;
    double z = 0.001;
    double sparse = 0.1;

    void validate() const {
        for (double w : {lpips, reproj, dsm, distill, sdf, load, z, sparse}) {
            if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be nonnegative");
        }
    }
};

template <class T>
struct LossTerms {
    T photo = T(0);
    T perceptual = T(0);
    T reproj = T(0);
    T dsm = T(0);
    T distill = T(0);
    T sdf = T(0);
    T load = T(0);
    T z = T(0);
    T sparse = T(0);
};

class NonFiniteLoss : public std::runtime_error {
  public:
    explicit NonFiniteLoss(const std::string &term) : std::runtime_error("non-finite loss term '" + term + "'"), mTerm(term) {}
    const std::string &term() const { return mTerm; }

  private:
    std::string mTerm;
};

inline void require_same_size(std::size_t a, std::size_t b, const char *what) {
    if (a != b) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

/// Mean absolute difference over all samples and channels.
template <class T>
T photo_loss(std::span<const T> rendered, std::span<const double> observed) {
    using std::abs;
    require_same_size(rendered.size(), observed.size(), "photo_loss");
    if (rendered.empty()) return T(0);
    T acc(0);
    for (std::size_t k = 0; k < rendered.size(); ++k) acc += abs(rendered[k] - T(observed[k]));
    return acc * T(1.0 / static_cast<double>(rendered.size()));
}

/// Mean L1 over a three-level dyadic box-blur pyramid, averaged over levels.
template <class T>
T perceptual_proxy(std::span<const T> rendered, std::span<const double> observed, int height, int width,
                   int channels) {
    using std::abs;
    require_same_size(rendered.size(), observed.size(), "perceptual_proxy");
    require_same_size(rendered.size(), static_cast<std::size_t>(height) * width * channels, "perceptual_proxy");
    if (height < 8 || width < 8) throw std::invalid_argument("perceptual_proxy: images must be at least 8x8");
    std::vector<T> a(rendered.begin(), rendered.end());
    std::vector<T> b;
    b.reserve(observed.size());
    for (double v : observed) b.push_back(T(v));
    int h = height, w = width;
    T total(0);
    for (int level = 0; level < 3; ++level) {
        T acc(0);
        for (std::size_t k = 0; k < a.size(); ++k) acc += abs(a[k] - b[k]);
        total += acc * T(1.0 / static_cast<double>(a.size()));
        if (level == 2) break;
        const int h2 = h / 2, w2 = w / 2;
        std::vector<T> na(static_cast<std::size_t>(h2) * w2 * channels), nb(na.size());
        for (int r = 0; r < h2; ++r) {
            for (int c = 0; c < w2; ++c) {
                for (int ch = 0; ch < channels; ++ch) {
                    auto idx = [&](int rr, int cc) { return (static_cast<std::size_t>(rr) * w + cc) * channels + ch; };
                    const auto o = (static_cast<std::size_t>(r) * w2 + c) * channels + ch;
                    na[o] = (a[idx(2 * r, 2 * c)] + a[idx(2 * r + 1, 2 * c)] + a[idx(2 * r, 2 * c + 1)] +
                             a[idx(2 * r + 1, 2 * c + 1)]) * T(0.25);
                    nb[o] = (b[idx(2 * r, 2 * c)] + b[idx(2 * r + 1, 2 * c)] + b[idx(2 * r, 2 * c + 1)] +
                             b[idx(2 * r + 1, 2 * c + 1)]) * T(0.25);
                }
            }
        }
        a.swap(na);
        b.swap(nb);
        h = h2;
        w = w2;
    }
    return total * T(1.0 / 3.0);
}

/// samples[j][m]: elevation seen by view j at the pixel homologous to ground
/// sample m. Mean |E_j - E_j'| over unordered view pairs and samples. A single
/// view yields 0 and sets `single_view`.
template <class T>
T reproj_loss(const std::vector<std::vector<T>> &samples, bool *single_view = nullptr) {
    using std::abs;
    if (single_view) *single_view = samples.size() < 2;
    if (samples.size() < 2) return T(0);
    const std::size_t m = samples.front().size();
    for (const auto &s : samples) require_same_size(s.size(), m, "reproj_loss");
    if (m == 0) return T(0);
    T acc(0);
    std::size_t pairs = 0;
    for (std::size_t j = 0; j < samples.size(); ++j) {
        for (std::size_t k = j + 1; k < samples.size(); ++k) {
            for (std::size_t i = 0; i < m; ++i) acc += abs(samples[j][i] - samples[k][i]);
            ++pairs;
        }
    }
    return acc * T(1.0 / static_cast<double>(pairs * m));
}

/// Masked mean absolute elevation error. Throws on an empty mask.
template <class T>
T dsm_loss(std::span<const T> pred, std::span<const double> ref, std::span<const std::uint8_t> mask) {
    using std::abs;
    require_same_size(pred.size(), ref.size(), "dsm_loss");
    require_same_size(pred.size(), mask.size(), "dsm_loss");
    T acc(0);
    std::size_t n = 0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        if (!mask[k]) continue;
        acc += abs(pred[k] - T(ref[k]));
        ++n;
    }
    if (n == 0) throw std::invalid_argument("dsm_loss: empty mask");
    return acc * T(1.0 / static_cast<double>(n));
}

/// sum_u w(u) |E(u) - D(u)|, divided by the pixel count when `normalize`.
template <class T>
T distill_loss(std::span<const T> elevation, std::span<const double> teacher_depth,
               std::span<const double> confidence, bool normalize = true) {
    using std::abs;
    require_same_size(elevation.size(), teacher_depth.size(), "distill_loss");
    require_same_size(elevation.size(), confidence.size(), "distill_loss");
    T acc(0);
    for (std::size_t k = 0; k < elevation.size(); ++k) {
        if (confidence[k] == 0.0) continue;
        acc += T(confidence[k]) * abs(elevation[k] - T(teacher_depth[k]));
    }
    if (normalize && !elevation.empty()) acc = acc * T(1.0 / static_cast<double>(elevation.size()));
    return acc;
}

template <class T>
struct SdfLossParts {
    T eikonal = T(0);
    T anchor = T(0);
    T total() const { return eikonal + anchor; }
};

/// Eikonal mean (|grad S| - 1)^2 over normalized samples plus mean |S| at the
/// normalized centers of active primitives.
template <class T>
SdfLossParts<T> sdf_loss_parts(const SdfField<T> &sdf, std::span<const Vec3<double>> samples,
                               std::span<const Vec3<T>> centers) {
    using std::abs;
    using std::sqrt;
    if (samples.empty()) throw std::invalid_argument("sdf_loss: at least one sample required");
    SdfLossParts<T> out;
    for (const auto &x : samples) {
        const auto vg = eval_sdf_grad(sdf, Vec3<T>(T(x[0]), T(x[1]), T(x[2])));
        const T n = sqrt(vg.gradient[0] * vg.gradient[0] + vg.gradient[1] * vg.gradient[1] +
                         vg.gradient[2] * vg.gradient[2]);
        const T d = n - T(1);
        out.eikonal += d * d;
    }
    out.eikonal = out.eikonal * T(1.0 / static_cast<double>(samples.size()));
    if (!centers.empty()) {
        for (const auto &c : centers) out.anchor += abs(eval_sdf(sdf, c));
        out.anchor = out.anchor * T(1.0 / static_cast<double>(centers.size()));
    }
    return out;
}

template <class T>
T sdf_loss(const SdfField<T> &sdf, std::span<const Vec3<double>> samples, std::span<const Vec3<T>> centers) {
    return sdf_loss_parts(sdf, samples, centers).total();
}

/// Mean opacity over the full capacity; inactive slots count as zero.
template <class T>
T sparsity(const SlotSet<T> &slots) {
    if (slots.capacity() == 0) return T(0);
    T acc(0);
    for (std::size_t k = 0; k < slots.capacity(); ++k) {
        if (slots.active[k]) acc += slots.slots[k].opacity();
    }
    return acc * T(1.0 / static_cast<double>(slots.capacity()));
}

template <class T>
T total_loss(const LossTerms<T> &t, const LossWeights &w) {
    const std::pair<const char *, const T *> named[] = {
        {"photo", &t.photo}, {"perceptual", &t.perceptual}, {"reproj", &t.reproj},
        {"dsm", &t.dsm},     {"distill", &t.distill},       {"sdf", &t.sdf},
        {"load", &t.load},   {"z", &t.z},                   {"sparse", &t.sparse},
    };
    for (const auto &[name, v] : named) {
        if (!std::isfinite(value(*v))) throw NonFiniteLoss(name);
    }
    T acc = t.photo;
    auto add = [&](double weight, const T &term) {
        if (weight != 0.0) acc += T(weight) * term;
    };
    add(w.lpips, t.perceptual);
    add(w.reproj, t.reproj);
    add(w.dsm, t.dsm);
    add(w.distill, t.distill);
    add(w.sdf, t.sdf);
    add(w.load, t.load);
    add(w.z, t.z);
    add(w.sparse, t.sparse);
    return acc;
}

}  // namespace swiftgs
