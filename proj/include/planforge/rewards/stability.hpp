#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "planforge/error.hpp"
#include "planforge/toyvlm/masks.hpp"
#include "planforge/toyvlm/model.hpp"

namespace planforge::rewards {

/// Data-free path mass of the masked MLP chains: an all-ones input pushed
/// through |gate| + |up| then |down|, summed over outputs and blocks.
/// Attention is left out since only MLP neurons are ever pruned.
inline double synflow_score(const toyvlm::ToyVlmParams& p, const toyvlm::MaskSet& masks) {
  if (!masks.empty() && masks.blocks.size() != p.blocks.size()) throw UsageError("synflow: mask block count mismatch");
  double flow = 0.0;
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const auto& blk = p.blocks[b];
    const std::size_t width = blk.gate.rows();
    if (!masks.empty() && masks.blocks[b].size() != width) throw UsageError("synflow: mask width mismatch");
    std::vector<double> out_mass(width, 0.0);
    for (std::size_t o = 0; o < blk.down.rows(); ++o) {
      const auto row = blk.down.row(o);
      for (std::size_t j = 0; j < width; ++j) out_mass[j] += std::abs(row[j]);
    }
    for (std::size_t j = 0; j < width; ++j) {
      if (!masks.empty() && !masks.blocks[b][j]) continue;
      double in_mass = 0.0;
      for (double v : blk.gate.row(j)) in_mass += std::abs(v);
      for (double v : blk.up.row(j)) in_mass += std::abs(v);
      flow += out_mass[j] * in_mass;
    }
  }
  return flow;
}

inline double flow_log_ratio(double flow, double flow_ref, double eps = 1e-8) {
  return std::log((flow + eps) / (flow_ref + eps));
}

/// Empirical quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw UsageError("quantile of an empty sample");
  std::sort(xs.begin(), xs.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

struct GateConfig {
  double lambda_syn = 2.0;
  double beta_syn = 1.0;
  double gamma_min = 0.1;
  double eps = 1e-8;
  std::size_t warmup_episodes = 50;
  double q_low = 0.05;
  double q_high = 0.95;

  void validate() const {
    if (!(lambda_syn >= 0.0 && beta_syn >= 0.0)) throw ConfigError("gate lambda/beta must be non-negative");
    if (!(gamma_min > 0.0 && gamma_min <= 1.0)) throw ConfigError("gamma_min must be in (0, 1]");
    if (!(q_low >= 0.0 && q_low <= q_high && q_high <= 1.0)) throw ConfigError("gate quantiles must be ordered in [0, 1]");
  }
};

struct GateOutput {
  double rho = 0.0;
  double psi = 0.0;
  double gamma = 1.0;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  bool warmup = false;
};

/// Piecewise band loss: 0 inside [lo, hi], linear penalty outside.
inline double band_loss(double rho, double lo, double hi, double lambda) {
  if (rho < lo) return -lambda * (lo - rho);
  if (rho > hi) return -lambda * (rho - hi);
  return 0.0;
}

inline double gate_weight(double psi, double beta, double gamma_min) {
  return std::clamp(std::exp(beta * psi), gamma_min, 1.0);
}

/// Episode weight from the flow log-ratio. For the first `warmup_episodes`
/// calls rho values are collected, the reported band narrows from (-inf, inf)
/// toward the running quantiles and gamma is held at 1. Afterwards the band is
/// frozen at the warmup quantiles.
class StabilityGate {
 public:
  StabilityGate(double flow_ref, GateConfig cfg = {}) : flow_ref_(flow_ref), cfg_(cfg) {
    cfg_.validate();
    if (!(flow_ref >= 0.0)) throw ConfigError("reference flow must be non-negative");
  }

  double rho(double flow) const { return flow_log_ratio(flow, flow_ref_, cfg_.eps); }

  GateOutput step(double rho) {
    GateOutput out;
    out.rho = rho;
    if (episodes_ < cfg_.warmup_episodes) {
      buffer_.push_back(rho);
      ++episodes_;
      const double frac = static_cast<double>(episodes_) / static_cast<double>(cfg_.warmup_episodes);
      const double lo = quantile(buffer_, cfg_.q_low), hi = quantile(buffer_, cfg_.q_high);
      if (episodes_ == cfg_.warmup_episodes) {
        lower_ = lo;
        upper_ = hi;
        calibrated_ = true;
      }
      const double widen = frac >= 1.0 ? 0.0 : (1.0 - frac) / frac * std::max(hi - lo, 1.0);
      out.lower = lo - widen;
      out.upper = hi + widen;
      out.psi = band_loss(rho, out.lower, out.upper, cfg_.lambda_syn);
      out.gamma = 1.0;
      out.warmup = true;
      return out;
    }
    ++episodes_;
    out.lower = lower_;
    out.upper = upper_;
    out.psi = band_loss(rho, lower_, upper_, cfg_.lambda_syn);
    out.gamma = gate_weight(out.psi, cfg_.beta_syn, cfg_.gamma_min);
    return out;
  }

  double flow_ref() const noexcept { return flow_ref_; }
  const GateConfig& config() const noexcept { return cfg_; }
  bool calibrated() const noexcept { return calibrated_; }
  double lower() const noexcept { return lower_; }
  double upper() const noexcept { return upper_; }
  std::size_t episodes() const noexcept { return episodes_; }

  /// Fixes the band directly, skipping warmup.
  void set_band(double lo, double hi) {
    if (!(lo <= hi)) throw UsageError("gate band must satisfy lower <= upper");
    lower_ = lo;
    upper_ = hi;
    calibrated_ = true;
    episodes_ = std::max(episodes_, cfg_.warmup_episodes);
  }

 private:
  double flow_ref_;
  GateConfig cfg_;
  std::vector<double> buffer_;
  std::size_t episodes_ = 0;
  bool calibrated_ = false;
  double lower_ = -std::numeric_limits<double>::infinity();
  double upper_ = std::numeric_limits<double>::infinity();
};

}  // namespace planforge::rewards
