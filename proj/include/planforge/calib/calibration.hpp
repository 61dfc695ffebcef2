#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "planforge/core/hash.hpp"
#include "planforge/core/preference.hpp"
#include "planforge/error.hpp"
#include "planforge/toyvlm/model.hpp"
#include "planforge/toyvlm/vocab.hpp"

namespace planforge::calib {

using diffmath::Tensor2;
using toyvlm::ToyVlmParams;

/// Fixed set of token sequences, each starting with the vision prefix.
struct CalibrationBatch {
  std::vector<std::vector<std::size_t>> sequences;
  std::size_t n_vision = 0;

  bool empty() const noexcept { return sequences.empty(); }

  void validate(const toyvlm::ToyVlmConfig& cfg) const {
    if (sequences.empty()) throw UsageError("calibration batch is empty");
    if (n_vision != cfg.n_vision_tokens) throw UsageError("calibration batch vision prefix does not match model");
    const std::size_t len = sequences.front().size();
    for (const auto& s : sequences) {
      if (s.size() != len) throw UsageError("calibration sequences must share one length");
    }
  }
};

/// Seeded synthetic batch: object tokens in the vision slots, arbitrary tokens after.
inline CalibrationBatch make_calibration_batch(const toyvlm::ToyVlmConfig& cfg, std::uint64_t seed,
                                               std::size_t count = 16) {
  cfg.validate();
  std::mt19937_64 rng(seed ^ 0xca11b4a7c0ffee00ULL);
  const std::size_t first_obj = cfg.vocab_size > toyvlm::vocab::kFirstObject ? toyvlm::vocab::kFirstObject : 0;
  std::uniform_int_distribution<std::size_t> obj(first_obj, cfg.vocab_size - 1);
  std::uniform_int_distribution<std::size_t> any(0, cfg.vocab_size - 1);
  CalibrationBatch b;
  b.n_vision = cfg.n_vision_tokens;
  b.sequences.resize(count);
  for (auto& seq : b.sequences) {
    seq.resize(cfg.max_seq);
    for (std::size_t i = 0; i < cfg.max_seq; ++i) seq[i] = i < cfg.n_vision_tokens ? obj(rng) : any(rng);
  }
  return b;
}

/// Root-mean-square over every entry of every tensor.
inline double rms(std::span<const Tensor2> xs) {
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto& x : xs) {
    for (double v : x.data()) sq += v * v;
    n += x.size();
  }
  if (n == 0) throw UsageError("rms of an empty set");
  return std::sqrt(sq / static_cast<double>(n));
}

/// Single-input sensitivity of one block: heads are (language x vision) attention
/// slices. Head-mean, sum over vision columns, max over language rows.
inline double example_sensitivity(std::span<const Tensor2> heads) {
  if (heads.empty()) throw UsageError("no attention heads");
  const std::size_t rows = heads.front().rows();
  const std::size_t cols = heads.front().cols();
  if (rows == 0) throw UsageError("visual sensitivity needs at least one language token");
  double best = 0.0;
  for (std::size_t t = 0; t < rows; ++t) {
    double mass = 0.0;
    for (const auto& h : heads) {
      if (h.rows() != rows || h.cols() != cols) throw DimensionError("attention head shapes differ");
      for (std::size_t v = 0; v < cols; ++v) mass += h(t, v);
    }
    mass /= static_cast<double>(heads.size());
    best = std::max(best, mass);
  }
  return best;
}

/// Per-block statistics gathered once from (params, batch).
struct LayerCalibration {
  double act_rms = 0.0;
  double visual_sensitivity = 0.0;
  /// |W| mean and std for gate, up, down in that order.
  std::array<double, 6> weight_stats{};

  bool operator==(const LayerCalibration&) const = default;
};

struct CalibrationProfile {
  std::vector<LayerCalibration> layers;
  std::vector<std::size_t> widths;  // MLP intermediate width per block

  std::size_t size() const noexcept { return layers.size(); }
  bool operator==(const CalibrationProfile&) const = default;
};

inline std::array<double, 2> abs_mean_std(const Tensor2& w) {
  if (w.size() == 0) return {0.0, 0.0};
  double s = 0.0;
  for (double v : w.data()) s += std::abs(v);
  const double mean = s / static_cast<double>(w.size());
  double var = 0.0;
  for (double v : w.data()) var += (std::abs(v) - mean) * (std::abs(v) - mean);
  return {mean, std::sqrt(var / static_cast<double>(w.size()))};
}

namespace detail {

struct Collected {
  std::vector<std::vector<Tensor2>> mlp_inputs;        // [block][example]
  std::vector<std::vector<double>> sensitivity;        // [block][example]
};

inline Collected collect(const ToyVlmParams& p, const CalibrationBatch& batch, bool attention, bool inputs) {
  batch.validate(p.config);
  if (attention && batch.sequences.front().size() <= batch.n_vision) {
    throw UsageError("visual sensitivity needs at least one language token");
  }
  const std::size_t nb = p.blocks.size();
  Collected c;
  c.mlp_inputs.assign(nb, {});
  c.sensitivity.assign(nb, {});
  toyvlm::ForwardOptions opts;
  opts.capture_attention = attention;
  opts.capture_mlp_inputs = inputs;
  opts.all_logits = false;
  for (const auto& seq : batch.sequences) {
    auto tr = toyvlm::forward(p, toyvlm::MaskSet{}, seq, opts);
    for (std::size_t b = 0; b < nb; ++b) {
      if (inputs) c.mlp_inputs[b].push_back(std::move(tr.mlp_inputs[b]));
      if (attention) c.sensitivity[b].push_back(example_sensitivity(tr.attention[b]));
    }
  }
  return c;
}

inline double pool_sensitivity(const std::vector<double>& per_example) {
  double s = 0.0;
  for (double v : per_example) s += v;
  return std::clamp(s / static_cast<double>(per_example.size()), 0.0, 1.0);
}

}  // namespace detail

/// RMS of the (normalised) MLP input activations of each block over all batch positions.
inline std::vector<double> activation_rms(const ToyVlmParams& p, const CalibrationBatch& batch) {
  const auto c = detail::collect(p, batch, false, true);
  std::vector<double> out;
  for (const auto& xs : c.mlp_inputs) out.push_back(rms(xs));
  return out;
}

/// Per-block cross-modal attention mass, averaged over the batch and clamped to [0, 1].
inline std::vector<double> visual_sensitivity(const ToyVlmParams& p, const CalibrationBatch& batch) {
  const auto c = detail::collect(p, batch, true, false);
  std::vector<double> out;
  for (const auto& v : c.sensitivity) out.push_back(detail::pool_sensitivity(v));
  return out;
}

inline CalibrationProfile calibrate(const ToyVlmParams& p, const CalibrationBatch& batch) {
  const auto c = detail::collect(p, batch, true, true);
  CalibrationProfile prof;
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    LayerCalibration lc;
    lc.act_rms = rms(c.mlp_inputs[b]);
    lc.visual_sensitivity = detail::pool_sensitivity(c.sensitivity[b]);
    const auto& blk = p.blocks[b];
    const auto g = abs_mean_std(blk.gate), u = abs_mean_std(blk.up), d = abs_mean_std(blk.down);
    lc.weight_stats = {g[0], g[1], u[0], u[1], d[0], d[1]};
    prof.layers.push_back(lc);
    prof.widths.push_back(blk.gate.rows());
  }
  return prof;
}

// ---- state features ----

inline constexpr int kFeatureLayoutVersion = 1;

/// Layout v1: [position, is_mlp, gate|W| mean, std, up mean, std, down mean, std,
///             act_rms, visual_sensitivity, c_min, c_max, w_rob, w_util, w_comp]
inline constexpr std::size_t kFeatureDim = 15;
inline constexpr std::size_t kPreferenceOffset = 12;

struct LayerState {
  std::size_t index = 0;
  double position = 0.0;  // index / L
  std::array<double, 1> layer_type{1.0};  // one-hot; only MLP blocks are prunable
  std::array<double, 6> weight_stats{};
  double act_rms = 0.0;
  double visual_sensitivity = 0.0;
  Budget budget;
  Preference preference;

  std::array<double, kFeatureDim> features() const {
    return {position,        layer_type[0],   weight_stats[0], weight_stats[1], weight_stats[2],
            weight_stats[3], weight_stats[4], weight_stats[5], act_rms,         visual_sensitivity,
            budget.c_min,    budget.c_max,    preference.rob,  preference.util, preference.comp};
  }

  bool operator==(const LayerState&) const = default;
};

inline std::vector<LayerState> states_from_profile(const CalibrationProfile& prof, const Budget& budget,
                                                   const Preference& w) {
  budget.validate();
  if (!w.on_simplex()) throw InputError("preference must be non-negative and sum to 1");
  std::vector<LayerState> out;
  const double L = static_cast<double>(prof.size());
  for (std::size_t i = 0; i < prof.size(); ++i) {
    LayerState s;
    s.index = i;
    s.position = static_cast<double>(i) / L;
    s.weight_stats = prof.layers[i].weight_stats;
    s.act_rms = prof.layers[i].act_rms;
    s.visual_sensitivity = prof.layers[i].visual_sensitivity;
    s.budget = budget;
    s.preference = w;
    out.push_back(s);
  }
  return out;
}

/// Row-major L x kFeatureDim feature matrix.
inline Tensor2 feature_matrix(std::span<const LayerState> states) {
  Tensor2 x(states.size(), kFeatureDim);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto f = states[i].features();
    for (std::size_t j = 0; j < kFeatureDim; ++j) x(i, j) = f[j];
  }
  return x;
}

/// FNV-1a fingerprint of every parameter bit and batch token.
inline std::uint64_t fingerprint(const ToyVlmParams& p, const CalibrationBatch& batch) {
  Fnv1a f;
  auto mix = [&f](std::uint64_t v) { f.word(v); };
  p.for_each([&](const std::string&, const Tensor2& t) {
    mix(t.rows());
    mix(t.cols());
    for (double v : t.data()) mix(std::bit_cast<std::uint64_t>(v));
  });
  mix(batch.n_vision);
  for (const auto& s : batch.sequences) {
    mix(s.size());
    for (auto id : s) mix(id);
  }
  return f.h;
}

/// Write-once store of calibration profiles keyed by (params, batch) fingerprint.
class ProfileCache {
 public:
  std::shared_ptr<const CalibrationProfile> get(const ToyVlmParams& p, const CalibrationBatch& batch) {
    const std::uint64_t key = fingerprint(p, batch);
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it != entries_.end()) return it->second;
    auto prof = std::make_shared<const CalibrationProfile>(calibrate(p, batch));
    ++computations_;
    entries_.emplace(key, prof);
    return prof;
  }

  std::size_t computations() const {
    std::lock_guard lock(mu_);
    return computations_;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::uint64_t, std::shared_ptr<const CalibrationProfile>> entries_;
  std::size_t computations_ = 0;
};

inline ProfileCache& default_profile_cache() {
  static ProfileCache cache;
  return cache;
}

inline std::vector<LayerState> build_states(const ToyVlmParams& p, const CalibrationBatch& batch, const Budget& budget,
                                            const Preference& w, ProfileCache& cache = default_profile_cache()) {
  budget.validate();
  return states_from_profile(*cache.get(p, batch), budget, w);
}

// ---- calibration document ----

inline nlohmann::json profile_to_json(const CalibrationProfile& prof) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < prof.size(); ++i) {
    const auto& l = prof.layers[i];
    const auto& w = l.weight_stats;
    j[std::to_string(i)] = {{"act_rms", l.act_rms},
                            {"visual_sensitivity", l.visual_sensitivity},
                            {"width", prof.widths[i]},
                            {"weight_stats",
                             {{"gate", {w[0], w[1]}}, {"up", {w[2], w[3]}}, {"down", {w[4], w[5]}}}}};
  }
  return j;
}

inline CalibrationProfile profile_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.empty()) throw LoadError("calibration document must be a non-empty object");
  CalibrationProfile prof;
  try {
    for (std::size_t i = 0; i < j.size(); ++i) {
      const auto& e = j.at(std::to_string(i));
      LayerCalibration l;
      l.act_rms = e.at("act_rms").get<double>();
      l.visual_sensitivity = e.at("visual_sensitivity").get<double>();
      const auto& ws = e.at("weight_stats");
      l.weight_stats = {ws.at("gate").at(0).get<double>(), ws.at("gate").at(1).get<double>(),
                        ws.at("up").at(0).get<double>(),   ws.at("up").at(1).get<double>(),
                        ws.at("down").at(0).get<double>(), ws.at("down").at(1).get<double>()};
      prof.layers.push_back(l);
      prof.widths.push_back(e.at("width").get<std::size_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("calibration document: ") + e.what());
  }
  return prof;
}

}  // namespace planforge::calib
