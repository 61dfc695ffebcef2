#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "planforge/diffmath/tape.hpp"
#include "planforge/error.hpp"
#include "planforge/pruner/pruner.hpp"
#include "planforge/rewards/objectives.hpp"
#include "planforge/rewards/probes.hpp"
#include "planforge/toyvlm/model.hpp"
#include "planforge/toyvlm/vocab.hpp"

namespace planforge::recovery {

using diffmath::Tape;
using diffmath::Tensor2;
using diffmath::Var;
using rewards::ProbeInstance;
using rewards::ProbeSet;
using toyvlm::MaskSet;
using toyvlm::ToyVlmParams;

struct TrainableScope {
  bool lm_head = true;
  bool final_norm = true;
  /// The gate/up/down weights of this many trailing blocks are trainable.
  std::size_t last_n_blocks = 1;

  bool empty() const { return !lm_head && !final_norm && last_n_blocks == 0; }

  bool contains(const std::string& name, std::size_t n_blocks) const {
    if (name == "lm_head") return lm_head;
    if (name == "final_norm") return final_norm;
    if (name.rfind("blocks.", 0) != 0) return false;
    const auto dot = name.find('.', 7);
    const std::size_t b = std::stoul(name.substr(7, dot - 7));
    const std::string leaf = name.substr(dot + 1);
    const bool mlp = leaf == "gate" || leaf == "up" || leaf == "down";
    return mlp && b + last_n_blocks >= n_blocks;
  }

  bool operator==(const TrainableScope&) const = default;
};

/// Parses "lm_head,final_norm,blocks:2". "none" yields an empty scope.
inline TrainableScope parse_scope(const std::string& text) {
  TrainableScope s{false, false, 0};
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item == "lm_head") {
      s.lm_head = true;
    } else if (item == "final_norm") {
      s.final_norm = true;
    } else if (item.rfind("blocks:", 0) == 0) {
      try {
        s.last_n_blocks = std::stoul(item.substr(7));
      } catch (const std::exception&) {
        throw ConfigError("scope: bad block count in '" + item + "'");
      }
    } else if (item != "none" && !item.empty()) {
      throw ConfigError("scope: unknown entry '" + item + "'");
    }
  }
  return s;
}

inline std::string scope_to_string(const TrainableScope& s) {
  std::vector<std::string> parts;
  if (s.lm_head) parts.push_back("lm_head");
  if (s.final_norm) parts.push_back("final_norm");
  if (s.last_n_blocks > 0) parts.push_back("blocks:" + std::to_string(s.last_n_blocks));
  if (parts.empty()) return "none";
  std::string out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out += "," + parts[i];
  return out;
}

struct RecoveryConfig {
  std::size_t steps = 200;
  double learning_rate = 0.05;
  std::size_t batch_size = 16;
  double grad_clip = 1.0;
  TrainableScope scope;
  double lambda_balance = 0.1;
  double lambda_margin = 0.1;
  double lambda_yes = 0.1;
  double margin_target = 0.5;
  double yes_rate_target = 0.5;
  /// Fraction of each batch drawn from the robustness probes.
  double mixture = 0.5;

  void validate() const {
    if (scope.empty()) throw ConfigError("recovery: trainable scope is empty");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("recovery: bad learning rate");
    if (batch_size == 0) throw ConfigError("recovery: batch_size must be positive");
    for (double w : {lambda_balance, lambda_margin, lambda_yes})
      if (!(w >= 0.0)) throw ConfigError("recovery: loss weights must be >= 0");
    if (!(mixture >= 0.0 && mixture <= 1.0)) throw ConfigError("recovery: mixture must lie in [0,1]");
    if (!(yes_rate_target >= 0.0 && yes_rate_target <= 1.0)) throw ConfigError("recovery: yes_rate_target must lie in [0,1]");
  }
};

struct AccuracyReport {
  /// Accuracy per ground-truth token.
  std::map<std::size_t, double> per_class;
  double balanced = 0.0;
};

/// Mean of per-class accuracies; classes are the distinct labels.
inline AccuracyReport balanced_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  if (predictions.size() != labels.size()) throw DimensionError("balanced_accuracy: size mismatch");
  if (labels.empty()) throw UsageError("balanced_accuracy: no labels");
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> counts;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& c = counts[labels[i]];
    c.first += predictions[i] == labels[i];
    ++c.second;
  }
  AccuracyReport r;
  for (const auto& [label, c] : counts) {
    r.per_class[label] = static_cast<double>(c.first) / static_cast<double>(c.second);
    r.balanced += r.per_class[label];
  }
  r.balanced /= static_cast<double>(counts.size());
  return r;
}

/// Predicted token: argmax over the probe's candidate answers (gt and neg), lower id on ties.
inline std::size_t predict(const ToyVlmParams& p, const MaskSet& masks, const ProbeInstance& probe) {
  toyvlm::ForwardOptions opts;
  opts.all_logits = probe.answer_position + 1 != probe.tokens.size();
  const auto tr = toyvlm::forward(p, masks, probe.tokens, opts);
  const auto row = tr.logits.row(probe.answer_position - tr.first_logit_position);
  std::vector<std::size_t> cand(probe.gt_tokens);
  cand.insert(cand.end(), probe.neg_tokens.begin(), probe.neg_tokens.end());
  std::sort(cand.begin(), cand.end());
  std::size_t best = cand.front();
  for (auto c : cand)
    if (row[c] > row[best]) best = c;
  return best;
}

inline AccuracyReport balanced_accuracy(const ToyVlmParams& p, const MaskSet& masks,
                                        std::span<const ProbeInstance> probes) {
  std::vector<std::size_t> pred, labels;
  for (const auto& pr : probes) {
    pred.push_back(predict(p, masks, pr));
    labels.push_back(pr.gt_tokens.front());
  }
  return balanced_accuracy(pred, labels);
}

struct TaskMetrics {
  double balanced_accuracy_rob = 0.0;
  double balanced_accuracy_util = 0.0;
  double margin_rob = 0.0;
  double margin_util = 0.0;

  double mean_margin() const { return 0.5 * (margin_rob + margin_util); }
  bool operator==(const TaskMetrics&) const = default;
};

inline TaskMetrics evaluate(const ToyVlmParams& p, const MaskSet& masks, const ProbeSet& probes) {
  if (probes.robustness.empty() || probes.utility.empty()) {
    throw UsageError("recovery evaluate: both probe partitions must be non-empty");
  }
  return {balanced_accuracy(p, masks, probes.robustness).balanced, balanced_accuracy(p, masks, probes.utility).balanced,
          rewards::mean_margin(p, masks, probes.robustness), rewards::mean_margin(p, masks, probes.utility)};
}

struct RecoveryReport {
  TaskMetrics pre;
  TaskMetrics post;
  std::vector<double> loss_curve;
  std::uint64_t mask_checksum_before = 0;
  std::uint64_t mask_checksum_after = 0;
};

inline nlohmann::ordered_json report_to_json(const RecoveryReport& r) {
  auto metrics = [](const TaskMetrics& m) {
    nlohmann::ordered_json j;
    j["balanced_accuracy_rob"] = m.balanced_accuracy_rob;
    j["balanced_accuracy_util"] = m.balanced_accuracy_util;
    j["margin_rob"] = m.margin_rob;
    j["margin_util"] = m.margin_util;
    j["mean_margin"] = m.mean_margin();
    return j;
  };
  nlohmann::ordered_json j;
  j["pre"] = metrics(r.pre);
  j["post"] = metrics(r.post);
  j["loss_curve"] = r.loss_curve;
  j["mask_checksum_before"] = r.mask_checksum_before;
  j["mask_checksum_after"] = r.mask_checksum_after;
  return j;
}

/// Robustness and utility probes drawn with replacement in the configured ratio.
inline std::vector<ProbeInstance> sample_batch(const RecoveryConfig& cfg, const ProbeSet& probes,
                                               std::mt19937_64& rng) {
  const auto n_rob = static_cast<std::size_t>(std::nearbyint(cfg.mixture * static_cast<double>(cfg.batch_size)));
  const std::size_t n_util = cfg.batch_size - n_rob;
  if ((n_rob > 0 && probes.robustness.empty()) || (n_util > 0 && probes.utility.empty())) {
    throw UsageError("recovery: probe partition required by the mixture is empty");
  }
  std::vector<ProbeInstance> batch;
  batch.reserve(cfg.batch_size);
  auto draw = [&](const std::vector<ProbeInstance>& from, std::size_t n) {
    std::uniform_int_distribution<std::size_t> pick(0, from.size() - 1);
    for (std::size_t i = 0; i < n; ++i) batch.push_back(from[pick(rng)]);
  };
  draw(probes.robustness, n_rob);
  draw(probes.utility, n_util);
  return batch;
}

/// Taped loss: CE + lb * class-balanced CE + lm * mean hinge(m0 - margin) + ly * (yes_rate - target)^2.
/// The yes-rate is the mean of P(yes | {yes, no}) over yes/no probes in the batch.
inline Var recovery_loss(Tape& tape, const ToyVlmParams& p, const toyvlm::ParamVars& v, const MaskSet& masks,
                         const RecoveryConfig& cfg, std::span<const ProbeInstance> batch) {
  using namespace diffmath;
  if (batch.empty()) throw UsageError("recovery_loss: empty batch");
  std::map<std::size_t, std::size_t> class_count;
  for (const auto& pr : batch) ++class_count[pr.gt_tokens.front()];
  const double n = static_cast<double>(batch.size());
  const double k = static_cast<double>(class_count.size());

  Var total = tape.constant(Tensor2(1, 1));
  Var yes_sum = tape.constant(Tensor2(1, 1));
  std::size_t n_yes_no = 0;
  for (const auto& pr : batch) {
    toyvlm::ForwardOptions opts;
    opts.all_logits = pr.answer_position + 1 != pr.tokens.size();
    Var logits = toyvlm::forward_vars(tape, p, v, masks, pr.tokens, opts);
    if (opts.all_logits) logits = slice_rows(logits, pr.answer_position, pr.answer_position + 1);
    Var lp = log_softmax_rows(logits);
    Var log_gt = logsumexp_rows(pick_cols(lp, pr.gt_tokens));
    Var log_neg = logsumexp_rows(pick_cols(lp, pr.neg_tokens));
    const double w_ce = 1.0 / n + cfg.lambda_balance / (k * static_cast<double>(class_count[pr.gt_tokens.front()]));
    total = total + log_gt * -w_ce;
    if (cfg.lambda_margin > 0.0) {
      total = total + relu((log_gt - log_neg) * -1.0 + cfg.margin_target) * (cfg.lambda_margin / n);
    }
    if (pr.task == rewards::TaskTag::robustness) {
      const std::size_t yes = toyvlm::vocab::kYes, no = toyvlm::vocab::kNo;
      yes_sum = yes_sum + sigmoid(pick_cols(logits, std::span(&yes, 1)) - pick_cols(logits, std::span(&no, 1)));
      ++n_yes_no;
    }
  }
  if (cfg.lambda_yes > 0.0 && n_yes_no > 0) {
    Var rate = yes_sum * (1.0 / static_cast<double>(n_yes_no));
    total = total + square(rate - cfg.yes_rate_target) * cfg.lambda_yes;
  }
  return total;
}

inline double recovery_loss(const ToyVlmParams& p, const MaskSet& masks, const RecoveryConfig& cfg,
                            std::span<const ProbeInstance> batch) {
  Tape tape;
  const auto v = toyvlm::bind_params(tape, p);
  return recovery_loss(tape, p, v, masks, cfg, batch).item();
}

/// Bound variables in the same order as ToyVlmParams::for_each.
inline std::vector<Var> named_vars(const toyvlm::ParamVars& v) {
  std::vector<Var> out = {v.tok_emb, v.vis_emb, v.pos_emb};
  for (const auto& b : v.blocks) out.insert(out.end(), {b.attn_norm, b.wq, b.wk, b.wv, b.wo, b.mlp_norm, b.gate, b.up, b.down});
  out.push_back(v.final_norm);
  out.push_back(v.lm_head);
  return out;
}

namespace detail {

inline void zero_masked_grads(ToyVlmParams& p, const MaskSet& masks, const std::vector<Tensor2*>& targets, std::vector<Tensor2>& grads) {
  if (masks.empty()) return;
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    auto& blk = p.blocks[b];
    const auto& mb = masks.blocks[b];
    for (std::size_t k = 0; k < targets.size(); ++k) {
      Tensor2& g = grads[k];
      if (targets[k] == &blk.gate || targets[k] == &blk.up) {
        for (std::size_t j = 0; j < mb.size(); ++j)
          if (!mb[j])
            for (std::size_t c = 0; c < g.cols(); ++c) g(j, c) = 0.0;
      } else if (targets[k] == &blk.down) {
        for (std::size_t j = 0; j < mb.size(); ++j)
          if (!mb[j])
            for (std::size_t r = 0; r < g.rows(); ++r) g(r, j) = 0.0;
      }
    }
  }
}

}  // namespace detail

struct RecoveryResult {
  ToyVlmParams params;
  RecoveryReport report;
};

/// Gradient descent on the scoped parameters with the mask overlay applied at
/// every forward. Gradients of masked gate/up rows and down columns are zeroed.
inline RecoveryResult recover(const ToyVlmParams& params, const MaskSet& masks, const RecoveryConfig& cfg,
                              const ProbeSet& train, const ProbeSet& eval, std::uint64_t seed) {
  cfg.validate();
  pruner::check_masks(params, masks);
  const std::size_t n_blocks = params.blocks.size();
  auto trainable = [&](const std::string& name) { return cfg.scope.contains(name, n_blocks); };

  RecoveryResult out{params, {}};
  out.report.mask_checksum_before = masks.checksum();
  out.report.pre = evaluate(params, masks, eval);
  std::mt19937_64 rng(seed);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto batch = sample_batch(cfg, train, rng);
    Tape tape;
    const auto v = toyvlm::bind_params(tape, out.params, trainable);
    Var loss = recovery_loss(tape, out.params, v, masks, cfg, batch);
    tape.backward(loss);
    out.report.loss_curve.push_back(loss.item());

    std::vector<Tensor2> grads;
    std::vector<Tensor2*> targets;
    std::size_t i = 0;
    const auto named = named_vars(v);
    out.params.for_each_mut([&](const std::string& name, Tensor2& t) {
      const Var& var = named[i++];
      if (!trainable(name)) return;
      targets.push_back(&t);
      grads.push_back(var.grad());
    });
    detail::zero_masked_grads(out.params, masks, targets, grads);

    double sq = 0.0;
    for (const auto& g : grads)
      for (double x : g.data()) sq += x * x;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) continue;
    const double scale = cfg.grad_clip > 0.0 && norm > cfg.grad_clip ? cfg.grad_clip / norm : 1.0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto dst = targets[i]->data();
      auto src = grads[i].data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] -= cfg.learning_rate * scale * src[j];
    }
  }

  out.report.mask_checksum_after = masks.checksum();
  out.report.post = cfg.steps == 0 ? out.report.pre : evaluate(out.params, masks, eval);
  return out;
}

}  // namespace planforge::recovery
