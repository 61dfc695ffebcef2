#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "planforge/error.hpp"

namespace planforge::rewards {

/// Online z-scoring of one objective. The first group seeds the statistics;
/// later groups are folded in by an exponential moving average.
class RunningNormalizer {
 public:
  static constexpr double kStdFloor = 1e-6;
  static constexpr double kDenomEps = 1e-8;

  explicit RunningNormalizer(double momentum = 0.99, double clip = 5.0) : momentum_(momentum), clip_(clip) {
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("normalizer momentum must be in [0, 1]");
    if (!(clip > 0.0)) throw ConfigError("normalizer clip bound must be positive");
  }

  /// Updates the statistics from `group`, then returns the clipped z-scores.
  std::vector<double> normalize(std::span<const double> group) {
    if (group.size() < 2) throw UsageError("normalizer needs a group of at least two values");
    // Welford: exact for constant groups.
    double mean = 0.0, m2 = 0.0;
    std::size_t k = 0;
    for (double x : group) {
      ++k;
      const double delta = x - mean;
      mean += delta / static_cast<double>(k);
      m2 += delta * (x - mean);
    }
    const double sd = std::sqrt(std::max(m2, 0.0) / static_cast<double>(group.size()));
    if (!initialized_) {
      mean_ = mean;
      std_ = sd;
      initialized_ = true;
    } else {
      mean_ = momentum_ * mean_ + (1.0 - momentum_) * mean;
      std_ = momentum_ * std_ + (1.0 - momentum_) * sd;
    }
    std_ = std::max(std_, kStdFloor);
    std::vector<double> out;
    for (double x : group) out.push_back(apply(x));
    return out;
  }

  double apply(double x) const { return std::clamp((x - mean_) / (std_ + kDenomEps), -clip_, clip_); }

  double mean() const noexcept { return mean_; }
  double stddev() const noexcept { return std_; }
  bool initialized() const noexcept { return initialized_; }
  double momentum() const noexcept { return momentum_; }
  double clip() const noexcept { return clip_; }

 private:
  double momentum_;
  double clip_;
  double mean_ = 0.0;
  double std_ = 1.0;
  bool initialized_ = false;
};

}  // namespace planforge::rewards
