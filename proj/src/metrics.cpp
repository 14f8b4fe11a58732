// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "swiftgs/metrics.hpp"

#include "swiftgs/image_io.hpp"

#include <json.hpp>

#include <cmath>
#include <stdexcept>

namespace swiftgs {

DsmMetrics dsm_metrics(std::span<const double> pred, std::span<const double> ref, std::span<const double> mask,
                       const std::vector<double> &thresholds) {
    if (pred.size() != ref.size()) throw std::invalid_argument("dsm_metrics: prediction and reference differ in size");
    if (!mask.empty() && mask.size() != ref.size()) throw std::invalid_argument("dsm_metrics: mask differs in size");
    DsmMetrics m;
    std::vector<std::size_t> hits(thresholds.size(), 0);
    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) {
        if (!mask.empty() && !(mask[k] > 0.5)) continue;
        const double d = std::abs(pred[k] - ref[k]);
        abs_sum += d;
        sq_sum += d * d;
        for (std::size_t t = 0; t < thresholds.size(); ++t) hits[t] += d < thresholds[t] ? 1 : 0;
        ++m.cells;
    }
    if (m.cells == 0) throw std::invalid_argument("dsm_metrics: empty mask");
    const double n = static_cast<double>(m.cells);
    m.mae = abs_sum / n;
    m.rmse = std::sqrt(sq_sum / n);
    for (std::size_t t = 0; t < thresholds.size(); ++t) m.pag[thresholds[t]] = static_cast<double>(hits[t]) / n;
    return m;
}

std::string format_metrics_report(const MetricsReport &report) {
    double prev = -1.0;
    for (const auto &[t, f] : report.dsm.pag) {
        if (f < 0.0 || f > 1.0 || f < prev) throw std::logic_error("metrics: PAG is not monotone in threshold");
        prev = f;
    }
    nlohmann::ordered_json j;
    j["dsm_mae"] = report.dsm.mae;
    j["rmse"] = report.dsm.rmse;
    nlohmann::ordered_json pag = nlohmann::ordered_json::object();
    for (const auto &[t, f] : report.dsm.pag) pag[shortest_repr(t)] = f;
    j["pag"] = pag;
    j["cells"] = report.dsm.cells;
    if (report.photo_l1 >= 0.0) j["photo_l1"] = report.photo_l1;
    else j["photo_l1"] = nullptr;
    j["head_activation"] = report.head_activation;
    if (report.runtime_seconds >= 0.0) j["runtime_seconds"] = report.runtime_seconds;
    else j["runtime_seconds"] = nullptr;
    return j.dump(2) + "\n";
}

}  // namespace swiftgs
