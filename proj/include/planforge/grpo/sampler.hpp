#pragma once

#include <array>
#include <random>
#include <span>
#include <vector>

#include "planforge/core/preference.hpp"
#include "planforge/error.hpp"

namespace planforge::grpo {

/// Table-row operating points used as discrete preference anchors.
inline std::vector<Preference> default_anchors() {
  return {{0.60, 0.30, 0.10}, {0.45, 0.45, 0.10}, {0.33, 0.33, 0.34}, {0.30, 0.60, 0.10}};
}

/// Mixture of uniformly chosen anchors and a Dirichlet over the simplex.
struct PreferenceSampler {
  std::vector<Preference> anchors = default_anchors();
  std::array<double, 3> concentration{1.0, 1.0, 1.0};
  double anchor_probability = 0.5;

  void validate() const {
    if (!(anchor_probability >= 0.0 && anchor_probability <= 1.0)) {
      throw ConfigError("anchor_probability must be in [0, 1]");
    }
    if (anchor_probability > 0.0 && anchors.empty()) throw ConfigError("anchor list is empty");
    for (const auto& a : anchors)
      if (!a.on_simplex()) throw ConfigError("anchors must lie on the simplex");
    for (double c : concentration)
      if (!(c > 0.0)) throw ConfigError("Dirichlet concentration must be positive");
  }

  template <class Rng>
  Preference sample(Rng& rng) const {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    if (u < anchor_probability) {
      return anchors[std::uniform_int_distribution<std::size_t>(0, anchors.size() - 1)(rng)];
    }
    std::array<double, 3> g{};
    double s = 0.0;
    for (std::size_t i = 0; i < 3; ++i) s += (g[i] = std::gamma_distribution<double>(concentration[i], 1.0)(rng));
    if (s == 0.0) return {};
    return {g[0] / s, g[1] / s, g[2] / s};
  }
};

inline double scalar_reward(const Preference& w, double n_rob, double n_util, double j_comp) {
  return w.rob * n_rob + w.util * n_util + w.comp * j_comp;
}

/// Each reward minus the group mean.
inline std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw UsageError("group advantages need at least two members");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(rewards.size());
  std::vector<double> out;
  for (double r : rewards) out.push_back(r - mean);
  return out;
}

}  // namespace planforge::grpo
