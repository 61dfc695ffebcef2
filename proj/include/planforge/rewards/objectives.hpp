#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "planforge/core/preference.hpp"
#include "planforge/error.hpp"
#include "planforge/rewards/probes.hpp"
#include "planforge/toyvlm/model.hpp"

namespace planforge::rewards {

inline constexpr double kMarginEps = 1e-12;

/// ln(sum P[gt] + eps) - ln(sum P[neg] + eps)
inline double log_margin(std::span<const double> dist, std::span<const std::size_t> gt,
                         std::span<const std::size_t> neg) {
  if (gt.empty() || neg.empty()) throw InputError("log_margin: empty answer set");
  double pg = 0.0, pn = 0.0;
  for (auto t : gt) pg += dist[t];
  for (auto t : neg) pn += dist[t];
  return std::log(pg + kMarginEps) - std::log(pn + kMarginEps);
}

struct ObjectiveVector {
  double j_rob = 0.0;
  double j_util = 0.0;
  double j_comp = 0.0;

  bool operator==(const ObjectiveVector&) const = default;
};

/// Linear ramp from 0 at c_min to 1 at c_max, flat outside.
inline double compression_return(double sparsity, const Budget& b) {
  b.validate();
  return std::clamp((sparsity - b.c_min) / (b.c_max - b.c_min), 0.0, 1.0);
}

inline double probe_margin(const toyvlm::ToyVlmParams& p, const toyvlm::MaskSet& masks, const ProbeInstance& probe) {
  toyvlm::ForwardOptions opts;
  opts.all_logits = probe.answer_position + 1 != probe.tokens.size();
  const auto tr = toyvlm::forward(p, masks, probe.tokens, opts);
  return log_margin(toyvlm::answer_distribution(tr, probe.answer_position), probe.gt_tokens, probe.neg_tokens);
}

inline double mean_margin(const toyvlm::ToyVlmParams& p, const toyvlm::MaskSet& masks,
                          std::span<const ProbeInstance> probes) {
  if (probes.empty()) throw UsageError("mean_margin: empty probe partition");
  double s = 0.0;
  for (const auto& pr : probes) s += probe_margin(p, masks, pr);
  return s / static_cast<double>(probes.size());
}

inline ObjectiveVector eval_objectives(const toyvlm::ToyVlmParams& p, const toyvlm::MaskSet& masks,
                                       const ProbeSet& probes, double realized_sparsity, const Budget& budget) {
  if (probes.robustness.empty() || probes.utility.empty()) {
    throw UsageError("eval_objectives: both probe partitions must be non-empty");
  }
  return {mean_margin(p, masks, probes.robustness), mean_margin(p, masks, probes.utility),
          compression_return(realized_sparsity, budget)};
}

}  // namespace planforge::rewards
