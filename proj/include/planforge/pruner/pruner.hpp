#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "planforge/error.hpp"
#include "planforge/policy/plan.hpp"
#include "planforge/toyvlm/masks.hpp"
#include "planforge/toyvlm/model.hpp"

namespace planforge::pruner {

using diffmath::Tensor2;
using toyvlm::MaskSet;
using toyvlm::ToyVlmParams;

/// Per-block importance of each MLP intermediate neuron.
struct RowScoreTable {
  std::vector<std::vector<double>> blocks;

  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w;
    for (const auto& b : blocks) w.push_back(b.size());
    return w;
  }
};

inline double l1_row(const Tensor2& w, std::size_t r) {
  double s = 0.0;
  for (double v : w.row(r)) s += std::abs(v);
  return s;
}

/// score = (|gate_i|_1 + |up_i|_1) * RMS(x_l). Gate and up rows of a neuron are
/// pruned together, so they share one score.
inline RowScoreTable score_rows(const ToyVlmParams& p, std::span<const double> act_rms) {
  if (act_rms.size() != p.blocks.size()) throw DimensionError("score_rows: one RMS value per block expected");
  RowScoreTable t;
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const auto& blk = p.blocks[b];
    std::vector<double> s(blk.gate.rows());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = (l1_row(blk.gate, i) + l1_row(blk.up, i)) * act_rms[b];
    t.blocks.push_back(std::move(s));
  }
  return t;
}

/// Zeroes round(r_l * width) lowest-scoring neurons per block; equal scores prune the lower index first.
inline MaskSet build_masks(const RowScoreTable& scores, const policy::PruningPlan& plan) {
  if (plan.ratios.size() != scores.blocks.size()) throw DimensionError("build_masks: plan length differs from block count");
  MaskSet m;
  for (std::size_t b = 0; b < scores.blocks.size(); ++b) {
    const auto& s = scores.blocks[b];
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return s[x] < s[y]; });
    std::vector<std::uint8_t> keep(s.size(), 1);
    const std::size_t k = policy::pruned_count(plan.ratios[b], s.size());
    for (std::size_t i = 0; i < k; ++i) keep[order[i]] = 0;
    m.blocks.push_back(std::move(keep));
  }
  return m;
}

inline void check_masks(const ToyVlmParams& p, const MaskSet& m) {
  if (m.blocks.size() != p.blocks.size()) throw UsageError("mask block count does not match the model");
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    if (m.blocks[b].size() != p.blocks[b].gate.rows()) {
      throw UsageError("mask width mismatch in block " + std::to_string(b));
    }
  }
}

/// Non-destructive overlay: the base parameters are shared, masks applied at forward time.
struct MaskedModel {
  const ToyVlmParams* base = nullptr;
  MaskSet masks;

  const ToyVlmParams& params() const { return *base; }
};

inline MaskedModel apply_plan(const ToyVlmParams& p, const MaskSet& m) {
  check_masks(p, m);
  return MaskedModel{&p, m};
}

/// Copy of the parameters with gate/up rows and down columns of pruned neurons set to zero.
inline ToyVlmParams materialize(const ToyVlmParams& p, const MaskSet& m) {
  check_masks(p, m);
  ToyVlmParams out = p;
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    auto& blk = out.blocks[b];
    for (std::size_t j = 0; j < m.blocks[b].size(); ++j) {
      if (m.blocks[b][j]) continue;
      for (double& v : blk.gate.row(j)) v = 0.0;
      for (double& v : blk.up.row(j)) v = 0.0;
      for (std::size_t r = 0; r < blk.down.rows(); ++r) blk.down(r, j) = 0.0;
    }
  }
  return out;
}

inline toyvlm::ForwardTrace forward(const MaskedModel& mm, std::span<const std::size_t> tokens,
                                    const toyvlm::ForwardOptions& opts = {}) {
  return toyvlm::forward(mm.params(), mm.masks, tokens, opts);
}

inline double mask_sparsity(const MaskSet& m) {
  const std::size_t n = m.total_neurons();
  return n == 0 ? 0.0 : static_cast<double>(m.total_zeros()) / static_cast<double>(n);
}

/// {"<block>": [zeroed neuron indices]}
inline nlohmann::ordered_json mask_manifest(const MaskSet& m) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    std::vector<std::size_t> zeros;
    for (std::size_t i = 0; i < m.blocks[b].size(); ++i)
      if (!m.blocks[b][i]) zeros.push_back(i);
    j[std::to_string(b)] = zeros;
  }
  return j;
}

inline MaskSet masks_from_manifest(const nlohmann::json& j, std::span<const std::size_t> widths) {
  MaskSet m;
  try {
    for (std::size_t b = 0; b < widths.size(); ++b) {
      std::vector<std::uint8_t> keep(widths[b], 1);
      for (auto i : j.at(std::to_string(b)).get<std::vector<std::size_t>>()) {
        if (i >= widths[b]) throw LoadError("mask manifest index out of range in block " + std::to_string(b));
        keep[i] = 0;
      }
      m.blocks.push_back(std::move(keep));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("mask manifest: ") + e.what());
  }
  return m;
}

}  // namespace planforge::pruner
