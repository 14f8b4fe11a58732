// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
// Sparse routing over a small set of residual task heads, with load-balance
// and z-loss regularizers and an empirical check of the router logit bounds.
#pragma once

#include "swiftgs/math.hpp"

#include <algorithm>
#include <array>
#include <string>
#include <vector>

namespace swiftgs {

enum class HeadRole { Rpc, Shadow, Radiometric, Detail };
const char *head_role_name(HeadRole r);

/// Residual branch h -> W2 softplus(W1 h + b1) + b2; the router adds it to its input.
template <class T>
struct TaskHead {
    Dense<T> inner;
    Dense<T> outer;
    HeadRole role = HeadRole::Detail;

    VecX<T> operator()(const VecX<T> &x) const { return outer(softplus_vec(inner(x))); }

    template <class U>
    TaskHead<U> cast() const {
        return {inner.template cast<U>(), outer.template cast<U>(), role};
    }
    template <class Self, class F>
    static void visit_named(Self &self, const std::string &name, F &&f) {
        decltype(self.inner)::visit_named(self.inner, name + ".inner", f);
        decltype(self.outer)::visit_named(self.outer, name + ".outer", f);
    }
};

template <class T>
struct Router {
    Dense<T> proj;  // features -> J scores
    double temperature = 1.0;
    int top_k = 2;

    int heads() const { return proj.out(); }

    template <class U>
    Router<U> cast() const {
        return {proj.template cast<U>(), temperature, top_k};
    }
    template <class Self, class F>
    static void visit_named(Self &self, const std::string &name, F &&f) {
        decltype(self.proj)::visit_named(self.proj, name + ".proj", f);
    }
};

TaskHead<double> make_head(int dim, int width, HeadRole role);
Router<double> make_router(int dim, int heads, int top_k, double temperature);

struct RoutingStats {
    std::vector<double> load;                // hard: selections per head / (sites * top_k)
    std::vector<std::size_t> counts;         // selections per head
    std::vector<double> importance;          // mean softmax probability per head
    std::size_t sites = 0;
};

template <class T>
struct RoutingResult {
    std::vector<VecX<T>> fused;
    std::vector<VecX<T>> logits;    // per site, J entries
    VecX<T> importance;             // differentiable soft load, sums to 1
    std::vector<std::vector<int>> selected;
    RoutingStats stats;
};

template <class T>
VecX<T> softmax(const VecX<T> &g, double temperature) {
    using std::exp;
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < g.size(); ++j) m = std::max(m, value(g[j]));
    VecX<T> e(g.size());
    T sum(0);
    for (Eigen::Index j = 0; j < g.size(); ++j) {
        e[j] = exp((g[j] - T(m)) * T(1.0 / temperature));
        sum += e[j];
    }
    for (Eigen::Index j = 0; j < g.size(); ++j) e[j] = e[j] / sum;
    return e;
}

/// Indices of the k largest probabilities; ties go to the lower index.
inline std::vector<int> top_k_indices(std::span<const double> p, int k) {
    std::vector<int> idx(p.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return p[a] > p[b]; });
    idx.resize(static_cast<std::size_t>(std::min<int>(k, static_cast<int>(p.size()))));
    return idx;
}

/// Per site: output = input + sum over the top-k heads of renormalized p_j head_j(input).
template <class T>
RoutingResult<T> route_and_apply(std::span<const VecX<T>> features, const Router<T> &router,
                                 const std::vector<TaskHead<T>> &heads) {
    const int j_count = router.heads();
    if (static_cast<int>(heads.size()) != j_count) throw std::invalid_argument("route_and_apply: head count mismatch");
    if (router.top_k < 1 || router.top_k > j_count) throw std::invalid_argument("route_and_apply: bad top_k");
    RoutingResult<T> out;
    out.importance = VecX<T>::Zero(j_count);
    out.stats.counts.assign(static_cast<std::size_t>(j_count), 0);
    out.stats.sites = features.size();
    for (const VecX<T> &h : features) {
        VecX<T> g = router.proj(h);
        const VecX<T> p = softmax(g, router.temperature);
        std::vector<double> pv(static_cast<std::size_t>(j_count));
        for (int j = 0; j < j_count; ++j) pv[j] = value(p[j]);
        const std::vector<int> sel = top_k_indices(pv, router.top_k);
        T norm(0);
        for (int j : sel) norm += p[j];
        VecX<T> y = h;
        for (int j : sel) {
            const T wj = p[j] / norm;
            const VecX<T> r = heads[static_cast<std::size_t>(j)](h);
            for (Eigen::Index d = 0; d < y.size(); ++d) y[d] += wj * r[d];
            ++out.stats.counts[static_cast<std::size_t>(j)];
        }
        for (int j = 0; j < j_count; ++j) out.importance[j] += p[j];
        out.fused.push_back(std::move(y));
        out.logits.push_back(std::move(g));
        out.selected.push_back(sel);
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, features.size()));
    for (int j = 0; j < j_count; ++j) out.importance[j] = out.importance[j] * T(1.0 / n);
    out.stats.load.resize(static_cast<std::size_t>(j_count));
    out.stats.importance.resize(static_cast<std::size_t>(j_count));
    const double total = n * router.top_k;
    for (int j = 0; j < j_count; ++j) {
        out.stats.load[j] = features.empty() ? 1.0 / j_count : static_cast<double>(out.stats.counts[j]) / total;
        out.stats.importance[j] = value(out.importance[j]);
    }
    return out;
}

/// Population variance of the loads.
template <class T>
T load_loss(std::span<const T> loads) {
    if (loads.empty()) return T(0);
    const double inv = 1.0 / static_cast<double>(loads.size());
    T mean(0);
    for (const T &l : loads) mean += l;
    mean = mean * T(inv);
    T acc(0);
    for (const T &l : loads) acc += (l - mean) * (l - mean);
    return acc * T(inv);
}

/// beta * mean over sites of logsumexp(logits)^2.
template <class T>
T z_loss(const std::vector<VecX<T>> &logits, double beta) {
    if (!(beta > 0.0)) throw std::invalid_argument("z_loss: beta must be positive");
    if (logits.empty()) return T(0);
    T acc(0);
    for (const auto &g : logits) {
        const T z = logsumexp(std::span<const T>(g.data(), static_cast<std::size_t>(g.size())));
        acc += z * z;
    }
    return acc * T(beta / static_cast<double>(logits.size()));
}

struct RouterBoundReport {
    bool precondition = false;  // z_loss <= B_z
    bool symmetric_precondition = false;  // the same bound also holds for -g
    double z_loss = 0.0;
    double z_loss_negated = 0.0;
    double g_max = 0.0;
    double max_logit = 0.0;      // max_{i,j} g
    double max_abs_logit = 0.0;  // max_{i,j} |g|
    double min_prob = 0.0;
    double prob_floor = 0.0;
    double upper_slack = 0.0;  // G_max - max g, always >= 0 under the precondition
    double abs_slack = 0.0;    // G_max - max |g|
    double prob_slack = 0.0;   // min p - floor
    bool upper_ok = false;
    bool abs_ok = false;
    bool prob_ok = false;
};

/// logits: E rows (sites) by J columns.
RouterBoundReport check_router_bounds(const MatX<double> &logits, double beta, double tau, double bound_z);

}  // namespace swiftgs
