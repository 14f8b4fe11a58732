// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "swiftgs/routing.hpp"

#include <cmath>

namespace swiftgs {

const char *head_role_name(HeadRole r) {
    switch (r) {
    case HeadRole::Rpc: return "rpc";
    case HeadRole::Shadow: return "shadow";
    case HeadRole::Radiometric: return "radiometric";
    case HeadRole::Detail: return "detail";
    }
    return "?";
}

TaskHead<double> make_head(int dim, int width, HeadRole role) {
    return {Dense<double>(width, dim), Dense<double>(dim, width), role};
}

Router<double> make_router(int dim, int heads, int top_k, double temperature) {
    if (heads < 1 || top_k < 1 || top_k > heads) throw std::invalid_argument("make_router: need 1 <= top_k <= heads");
    if (!(temperature > 0.0)) throw std::invalid_argument("make_router: temperature must be positive");
    return {Dense<double>(heads, dim), temperature, top_k};
}

RouterBoundReport check_router_bounds(const MatX<double> &logits, double beta, double tau, double bound_z) {
    if (!(beta > 0.0) || !(tau > 0.0) || !(bound_z > 0.0)) {
        throw std::invalid_argument("check_router_bounds: beta, tau and B_z must be positive");
    }
    RouterBoundReport r;
    const auto sites = static_cast<double>(logits.rows());
    const auto heads = static_cast<double>(logits.cols());
    std::vector<VecX<double>> pos, neg;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        pos.push_back(logits.row(i).transpose());
        neg.push_back(-logits.row(i).transpose());
    }
    r.z_loss = z_loss(pos, beta);
    r.z_loss_negated = z_loss(neg, beta);
    r.precondition = r.z_loss <= bound_z;
    r.symmetric_precondition = r.precondition && r.z_loss_negated <= bound_z;
    r.g_max = std::sqrt(sites * bound_z / beta);
    r.prob_floor = std::exp(-2.0 * r.g_max / tau) / heads;
    r.max_logit = logits.size() ? logits.maxCoeff() : 0.0;
    r.max_abs_logit = logits.size() ? logits.cwiseAbs().maxCoeff() : 0.0;
    r.min_prob = 1.0;
    for (const auto &g : pos) {
        const VecX<double> p = softmax(g, tau);
        r.min_prob = std::min(r.min_prob, p.minCoeff());
    }
    r.upper_slack = r.g_max - r.max_logit;
    r.abs_slack = r.g_max - r.max_abs_logit;
    r.prob_slack = r.min_prob - r.prob_floor;
    r.upper_ok = r.upper_slack >= 0.0;
    r.abs_ok = r.abs_slack >= 0.0;
    r.prob_ok = r.prob_slack >= 0.0;
    return r;
}

}  // namespace swiftgs
