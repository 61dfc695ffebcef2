#pragma once

// Analytic stand-in for a pruned network. Layer l costs robustness a_l * r_l^2
// and utility b_l * r_l^2, so preferences that favour robustness should move
// pruning toward layers with small a_l, and vice versa.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "planforge/grpo/environment.hpp"

namespace planforge::grpo {

class SyntheticLandscape final : public PlanEnvironment {
 public:
  SyntheticLandscape(std::vector<double> rob_sensitivity, std::vector<double> util_sensitivity,
                     std::vector<std::size_t> widths)
      : a_(std::move(rob_sensitivity)), b_(std::move(util_sensitivity)) {
    if (a_.size() != b_.size() || a_.size() != widths.size() || a_.size() < 2) {
      throw ConfigError("landscape needs matching sensitivity/width vectors with at least two layers");
    }
    for (std::size_t l = 0; l < a_.size(); ++l) {
      if (!(a_[l] > 0.0 && b_[l] > 0.0)) throw ConfigError("landscape sensitivities must be positive");
      calib::LayerCalibration c;
      c.act_rms = 1.0;
      c.visual_sensitivity = a_[l] / (a_[l] + b_[l]);
      c.weight_stats = {a_[l], b_[l], 0.0, 0.0, 0.0, 0.0};
      profile_.layers.push_back(c);
    }
    profile_.widths = std::move(widths);
  }

  /// Seeded opposed landscape: robustness cost rises with depth, utility cost falls.
  static SyntheticLandscape opposed(std::size_t layers, std::uint64_t seed, std::size_t width = 64) {
    std::mt19937_64 rng(seed ^ 0x1a4d5ca9eULL);
    std::uniform_real_distribution<double> jitter(0.8, 1.2);
    std::vector<double> a, b;
    for (std::size_t l = 0; l < layers; ++l) {
      const double t = layers == 1 ? 0.0 : static_cast<double>(l) / static_cast<double>(layers - 1);
      a.push_back((0.5 + 4.5 * t) * jitter(rng));
      b.push_back((5.0 - 4.5 * t) * jitter(rng));
    }
    return SyntheticLandscape(a, b, std::vector<std::size_t>(layers, width));
  }

  const calib::CalibrationProfile& profile() const override { return profile_; }

  rewards::ObjectiveVector evaluate(const policy::PruningPlan& plan, const Budget& budget) const override {
    check(plan);
    rewards::ObjectiveVector o;
    for (std::size_t l = 0; l < a_.size(); ++l) {
      const double r = plan.ratios[l];
      o.j_rob -= a_[l] * r * r;
      o.j_util -= b_[l] * r * r;
    }
    o.j_comp = rewards::compression_return(policy::realized_sparsity(plan.ratios, profile_.widths), budget);
    return o;
  }

  /// Surviving neuron count; a linear stand-in for path mass.
  double flow(const policy::PruningPlan& plan) const override {
    check(plan);
    double f = 0.0;
    for (std::size_t l = 0; l < a_.size(); ++l) {
      f += static_cast<double>(profile_.widths[l] - policy::pruned_count(plan.ratios[l], profile_.widths[l]));
    }
    return f;
  }

  double reference_flow() const override {
    double f = 0.0;
    for (auto w : profile_.widths) f += static_cast<double>(w);
    return f;
  }

  const std::vector<double>& rob_sensitivity() const noexcept { return a_; }
  const std::vector<double>& util_sensitivity() const noexcept { return b_; }

 private:
  void check(const policy::PruningPlan& plan) const {
    if (plan.ratios.size() != a_.size()) throw DimensionError("landscape: plan length mismatch");
  }

  std::vector<double> a_, b_;
  calib::CalibrationProfile profile_;
};

}  // namespace planforge::grpo
