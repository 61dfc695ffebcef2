#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "planforge/core/preference.hpp"
#include "planforge/error.hpp"

namespace planforge::policy {

struct PlanMapperConfig {
  double c_min = 0.2;
  double c_max = 0.5;
  double kappa = 1.0;

  Budget budget() const { return {c_min, c_max}; }

  void validate() const {
    budget().validate();
    if (!(kappa > 0.0)) throw ConfigError("kappa must be positive");
  }

  bool operator==(const PlanMapperConfig&) const = default;
};

/// Layer-wise pruning ratios plus the bookkeeping needed to audit them.
struct PruningPlan {
  std::vector<std::size_t> layer_ids;
  std::vector<double> ratios;
  double target_sparsity = 0.0;
  double realized_sparsity = 0.0;
  Preference preference;
  std::vector<std::size_t> saturated_layers;

  bool operator==(const PruningPlan&) const = default;
};

/// Rows pruned in a layer of `width` neurons at ratio r (round half to even).
inline std::size_t pruned_count(double r, std::size_t width) {
  return static_cast<std::size_t>(std::nearbyint(std::clamp(r, 0.0, 1.0) * static_cast<double>(width)));
}

inline double realized_sparsity(std::span<const double> ratios, std::span<const std::size_t> widths) {
  if (ratios.size() != widths.size()) throw DimensionError("realized_sparsity: ratio/width count mismatch");
  std::size_t pruned = 0, total = 0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    pruned += pruned_count(ratios[i], widths[i]);
    total += widths[i];
  }
  return total == 0 ? 0.0 : static_cast<double>(pruned) / static_cast<double>(total);
}

/// Target = c_min + s (c_max - c_min); r_l = clip(kappa * target * L * p_l, 0, 1).
inline PruningPlan map_plan(double s, std::span<const double> p, const PlanMapperConfig& cfg,
                            std::span<const std::size_t> widths, const Preference& w = {}) {
  cfg.validate();
  if (p.size() != widths.size()) throw DimensionError("map_plan: allocation length differs from layer count");
  PruningPlan plan;
  plan.preference = w;
  plan.target_sparsity = cfg.c_min + s * (cfg.c_max - cfg.c_min);
  const double L = static_cast<double>(p.size());
  for (std::size_t l = 0; l < p.size(); ++l) {
    const double raw = cfg.kappa * plan.target_sparsity * L * p[l];
    plan.layer_ids.push_back(l);
    plan.ratios.push_back(std::clamp(raw, 0.0, 1.0));
    if (raw > 1.0) plan.saturated_layers.push_back(l);
  }
  plan.realized_sparsity = realized_sparsity(plan.ratios, widths);
  return plan;
}

inline constexpr int kPlanFormatVersion = 1;

/// Field order is fixed so that save -> load -> save is byte-identical.
inline nlohmann::ordered_json plan_to_json(const PruningPlan& plan) {
  nlohmann::ordered_json j;
  j["version"] = kPlanFormatVersion;
  j["layer_ids"] = plan.layer_ids;
  j["ratios"] = plan.ratios;
  j["target_sparsity"] = plan.target_sparsity;
  j["realized_sparsity"] = plan.realized_sparsity;
  j["preference"] = {plan.preference.rob, plan.preference.util, plan.preference.comp};
  j["saturated_layers"] = plan.saturated_layers;
  return j;
}

inline std::string plan_to_string(const PruningPlan& plan) { return plan_to_json(plan).dump(2) + "\n"; }


inline PruningPlan plan_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kPlanFormatVersion) throw LoadError("unsupported plan version");
    PruningPlan plan;
    plan.layer_ids = j.at("layer_ids").get<std::vector<std::size_t>>();
    plan.ratios = j.at("ratios").get<std::vector<double>>();
    plan.target_sparsity = j.at("target_sparsity").get<double>();
    plan.realized_sparsity = j.at("realized_sparsity").get<double>();
    const auto w = j.at("preference").get<std::vector<double>>();
    if (w.size() != 3) throw LoadError("plan preference must have 3 entries");
    plan.preference = {w[0], w[1], w[2]};
    plan.saturated_layers = j.at("saturated_layers").get<std::vector<std::size_t>>();
    if (plan.layer_ids.size() != plan.ratios.size()) throw LoadError("plan layer_ids/ratios length mismatch");
    for (double r : plan.ratios)
      if (!(r >= 0.0 && r <= 1.0)) throw LoadError("plan ratio outside [0, 1]");
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("plan file: ") + e.what());
  }
}

inline PruningPlan plan_from_string(const std::string& text) {
  try {
    return plan_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError(std::string("plan file: ") + e.what());
  }
}

}  // namespace planforge::policy
