#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "planforge/core/preference.hpp"
#include "planforge/error.hpp"

namespace planforge::cli {

struct ParetoPoint {
  Preference preference;
  double sparsity = 0.0;
  double j_rob = 0.0;
  double j_util = 0.0;
  bool dominated = false;
};

/// a dominates b: no worse in both objectives and strictly better in one.
inline bool dominates(const ParetoPoint& a, const ParetoPoint& b) {
  return a.j_rob >= b.j_rob && a.j_util >= b.j_util && (a.j_rob > b.j_rob || a.j_util > b.j_util);
}

/// Sets `dominated` for every point. Points with sparsity outside [lo, hi]
/// fail the budget filter: they are flagged dominated and dominate nothing.
/// Sort-and-sweep over j_rob, O(n log n).
inline void flag_dominated(std::vector<ParetoPoint>& pts, double lo = -std::numeric_limits<double>::infinity(),
                           double hi = std::numeric_limits<double>::infinity()) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const bool in_budget = pts[i].sparsity >= lo && pts[i].sparsity <= hi;
    pts[i].dominated = !in_budget;
    if (in_budget) idx.push_back(i);
  }
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return pts[a].j_rob > pts[b].j_rob; });
  // Best utility among points with strictly larger j_rob than the current run.
  double best_util = -std::numeric_limits<double>::infinity();
  for (std::size_t start = 0; start < idx.size();) {
    std::size_t end = start;
    double run_max = -std::numeric_limits<double>::infinity();
    while (end < idx.size() && pts[idx[end]].j_rob == pts[idx[start]].j_rob) {
      run_max = std::max(run_max, pts[idx[end]].j_util);
      ++end;
    }
    for (std::size_t k = start; k < end; ++k) {
      const double u = pts[idx[k]].j_util;
      pts[idx[k]].dominated = best_util >= u || run_max > u;
    }
    best_util = std::max(best_util, run_max);
    start = end;
  }
}

/// Simplex lattice with spacing `step` (1/step must be an integer), ordered by
/// (rob, util) ascending.
inline std::vector<Preference> preference_grid(double step) {
  if (!(step > 0.0 && step <= 1.0)) throw ConfigError("sweep grid step must lie in (0, 1]");
  const double n_real = 1.0 / step;
  const auto n = static_cast<std::size_t>(std::llround(n_real));
  if (std::abs(n_real - static_cast<double>(n)) > 1e-9) throw ConfigError("sweep grid step must divide 1");
  std::vector<Preference> out;
  const double dn = static_cast<double>(n);
  for (std::size_t i = 0; i <= n; ++i)
    for (std::size_t j = 0; i + j <= n; ++j)
      out.push_back({static_cast<double>(i) / dn, static_cast<double>(j) / dn, static_cast<double>(n - i - j) / dn});
  return out;
}

inline constexpr const char* kParetoCsvHeader =
    "preference_rob,preference_util,preference_comp,sparsity,j_rob,j_util,dominated";

inline std::string pareto_csv(const std::vector<ParetoPoint>& pts) {
  std::ostringstream os;
  os.precision(17);
  os << kParetoCsvHeader << "\n";
  for (const auto& p : pts) {
    os << p.preference.rob << "," << p.preference.util << "," << p.preference.comp << "," << p.sparsity << ","
       << p.j_rob << "," << p.j_util << "," << (p.dominated ? 1 : 0) << "\n";
  }
  return os.str();
}

inline nlohmann::ordered_json pareto_json(const std::vector<ParetoPoint>& pts) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& p : pts) {
    nlohmann::ordered_json j;
    j["preference"] = {p.preference.rob, p.preference.util, p.preference.comp};
    j["sparsity"] = p.sparsity;
    j["j_rob"] = p.j_rob;
    j["j_util"] = p.j_util;
    j["dominated"] = p.dominated;
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace planforge::cli
