// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
// DSM accuracy metrics and the JSON-shaped evaluation report.
#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

namespace swiftgs {

struct DsmMetrics {
    double mae = 0.0;
    double rmse = 0.0;
    std::map<double, double> pag;  // threshold (m) -> fraction with |error| < threshold
    std::size_t cells = 0;         // masked cells used
};

inline const std::vector<double> kDefaultPagThresholds = {2.5, 7.5};

/// Masked MAE, RMSE and PAG. A null mask uses every cell. Throws
/// std::invalid_argument on shape mismatch or an empty mask.
DsmMetrics dsm_metrics(std::span<const double> pred, std::span<const double> ref, std::span<const double> mask,
                       const std::vector<double> &thresholds = kDefaultPagThresholds);

struct MetricsReport {
    DsmMetrics dsm;
    double photo_l1 = -1.0;                 // negative when no renders were compared
    std::vector<double> head_activation;   // per routed head, fraction of selections
    double runtime_seconds = -1.0;         // negative: not recorded (keeps reports byte-stable)
};

/// Pretty-printed JSON object with keys dsm_mae, rmse, pag, cells, photo_l1,
/// head_activation, runtime_seconds. Throws if PAG is not monotone in threshold.
std::string format_metrics_report(const MetricsReport &report);

}  // namespace swiftgs
