#pragma once

#include <array>
#include <cmath>
#include <string>

#include "planforge/error.hpp"

namespace planforge {

/// Point on the 2-simplex weighting (robustness, utility, compression).
struct Preference {
  double rob = 1.0 / 3.0;
  double util = 1.0 / 3.0;
  double comp = 1.0 / 3.0;

  std::array<double, 3> as_array() const { return {rob, util, comp}; }

  bool on_simplex(double tol = 1e-9) const {
    return rob >= 0.0 && util >= 0.0 && comp >= 0.0 && std::abs(rob + util + comp - 1.0) <= tol;
  }

  /// Rescales non-negative weights to sum to one.
  Preference normalized() const {
    if (rob < 0.0 || util < 0.0 || comp < 0.0) throw InputError("preference weights must be non-negative");
    const double s = rob + util + comp;
    if (!(s > 0.0)) throw InputError("preference weights must not all be zero");
    return {rob / s, util / s, comp / s};
  }

  bool operator==(const Preference&) const = default;
};

/// Target sparsity interval [c_min, c_max].
struct Budget {
  double c_min = 0.2;
  double c_max = 0.5;

  void validate() const {
    if (!(c_min >= 0.0 && c_min < c_max && c_max <= 1.0)) {
      throw ConfigError("budget must satisfy 0 <= c_min < c_max <= 1 (got [" + std::to_string(c_min) + ", " +
                        std::to_string(c_max) + "])");
    }
  }

  bool operator==(const Budget&) const = default;
};

}  // namespace planforge
