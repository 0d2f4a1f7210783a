// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "fedcompress/error.hpp"

namespace fedcompress {

/// Cluster-count controller. C starts at c_min and grows by one whenever the
/// moving average of the aggregated score over `window` rounds fails to beat
/// the best of the previous `patience` moving averages by more than `tolerance`.
struct ControllerState {
  std::size_t clusters = 4;
  std::size_t c_min = 4;
  std::size_t c_max = 32;
  std::size_t window = 3;
  std::size_t patience = 3;
  double tolerance = 1e-3;
  std::vector<double> history;

  static ControllerState start(std::size_t c_min, std::size_t c_max, std::size_t window = 3,
                               std::size_t patience = 3, double tolerance = 1e-3) {
    ControllerState s{c_min, c_min, c_max, window, patience, tolerance, {}};
    s.validate();
    return s;
  }

  void validate() const {
    if (c_min < 1) throw InvalidInput("controller.c_min must be at least 1");
    if (c_min > c_max) {
      throw InvalidInput("controller.c_min (" + std::to_string(c_min) + ") exceeds controller.c_max (" +
                         std::to_string(c_max) + ")");
    }
    if (clusters < c_min || clusters > c_max) throw InvalidInput("cluster count outside [c_min, c_max]");
    if (window < 1) throw InvalidInput("controller.window must be at least 1");
    if (patience < 1) throw InvalidInput("controller.patience must be at least 1");
    if (!(tolerance >= 0.0)) throw InvalidInput("controller.tolerance must be non-negative");
  }

  /// Mean of the `window` scores ending at history index `end` (exclusive).
  double moving_average(std::size_t end) const {
    const auto first = history.begin() + static_cast<std::ptrdiff_t>(end - window);
    return std::accumulate(first, first + static_cast<std::ptrdiff_t>(window), 0.0) / static_cast<double>(window);
  }
};

inline ControllerState update_cluster_count(ControllerState ctrl, double score) {
  ctrl.history.push_back(score);
  const std::size_t h = ctrl.history.size();
  if (h < ctrl.window + ctrl.patience) return ctrl;
  const double current = ctrl.moving_average(h);
  double best_previous = ctrl.moving_average(h - 1);
  for (std::size_t p = 2; p <= ctrl.patience; ++p) best_previous = std::max(best_previous, ctrl.moving_average(h - p));
  if (current <= best_previous + ctrl.tolerance) ctrl.clusters = std::min(ctrl.clusters + 1, ctrl.c_max);
  return ctrl;
}

}  // namespace fedcompress
