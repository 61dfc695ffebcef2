#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <algorithm>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "planforge/diffmath/tape.hpp"
#include "planforge/diffmath/tensor.hpp"
#include "planforge/error.hpp"
#include "planforge/toyvlm/masks.hpp"

namespace planforge::toyvlm {

using diffmath::Tape;
using diffmath::Tensor2;
using diffmath::Var;

/// Shape of the miniature vision-language transformer. The vision "image" is
/// the first `n_vision_tokens` positions of every sequence.
struct ToyVlmConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_blocks = 4;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 32;
  std::size_t n_vision_tokens = 8;
  std::size_t max_seq = 16;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (d_model == 0 || n_heads == 0 || n_blocks == 0 || d_ff == 0 || vocab_size == 0) {
      throw ConfigError("ToyVlmConfig: all dimensions must be positive");
    }
    if (d_model % n_heads != 0) throw ConfigError("ToyVlmConfig: d_model must be divisible by n_heads");
    if (n_vision_tokens >= max_seq) throw ConfigError("ToyVlmConfig: n_vision_tokens must be < max_seq");
  }

  bool operator==(const ToyVlmConfig&) const = default;
};

struct BlockParams {
  Tensor2 attn_norm;  // 1 x d
  Tensor2 wq, wk, wv, wo;  // d x d
  Tensor2 mlp_norm;  // 1 x d
  Tensor2 gate;  // d_ff x d
  Tensor2 up;    // d_ff x d
  Tensor2 down;  // d x d_ff

  bool operator==(const BlockParams&) const = default;
};

struct ToyVlmParams {
  ToyVlmConfig config;
  Tensor2 tok_emb;  // vocab x d
  Tensor2 vis_emb;  // n_vision x d, added at the vision positions
  Tensor2 pos_emb;  // max_seq x d
  std::vector<BlockParams> blocks;
  Tensor2 final_norm;  // 1 x d
  Tensor2 lm_head;     // vocab x d

  /// Visits every parameter tensor with its stable name, in checkpoint order.
  template <class Self, class Fn>
  static void visit(Self& self, Fn&& fn) {
    fn(std::string("tok_emb"), self.tok_emb);
    fn(std::string("vis_emb"), self.vis_emb);
    fn(std::string("pos_emb"), self.pos_emb);
    for (std::size_t b = 0; b < self.blocks.size(); ++b) {
      const std::string p = "blocks." + std::to_string(b) + ".";
      auto& blk = self.blocks[b];
      fn(p + "attn_norm", blk.attn_norm);
      fn(p + "wq", blk.wq);
      fn(p + "wk", blk.wk);
      fn(p + "wv", blk.wv);
      fn(p + "wo", blk.wo);
      fn(p + "mlp_norm", blk.mlp_norm);
      fn(p + "gate", blk.gate);
      fn(p + "up", blk.up);
      fn(p + "down", blk.down);
    }
    fn(std::string("final_norm"), self.final_norm);
    fn(std::string("lm_head"), self.lm_head);
  }

  template <class Fn>
  void for_each(Fn&& fn) const { visit(*this, std::forward<Fn>(fn)); }
  template <class Fn>
  void for_each_mut(Fn&& fn) { visit(*this, std::forward<Fn>(fn)); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor2& t) { n += t.size(); });
    return n;
  }

  bool operator==(const ToyVlmParams&) const = default;
};

namespace detail {

inline Tensor2 normal_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor2 t(r, c);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace detail

/// Seeded initialisation; identical seeds give bit-identical parameters.
inline ToyVlmParams init_model(const ToyVlmConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const double d = static_cast<double>(cfg.d_model);
  const double inv_sqrt_d = 1.0 / std::sqrt(d);
  ToyVlmParams p;
  p.config = cfg;
  p.tok_emb = detail::normal_tensor(rng, cfg.vocab_size, cfg.d_model, 1.0);
  p.vis_emb = detail::normal_tensor(rng, cfg.n_vision_tokens, cfg.d_model, 1.0);
  p.pos_emb = detail::normal_tensor(rng, cfg.max_seq, cfg.d_model, 0.5);
  p.blocks.resize(cfg.n_blocks);
  for (auto& b : p.blocks) {
    b.attn_norm = Tensor2(1, cfg.d_model, 1.0);
    // Sharper query/key init than 1/sqrt(d) so attention maps are not near-uniform.
    b.wq = detail::normal_tensor(rng, cfg.d_model, cfg.d_model, 2.0 * inv_sqrt_d);
    b.wk = detail::normal_tensor(rng, cfg.d_model, cfg.d_model, 2.0 * inv_sqrt_d);
    b.wv = detail::normal_tensor(rng, cfg.d_model, cfg.d_model, inv_sqrt_d);
    b.wo = detail::normal_tensor(rng, cfg.d_model, cfg.d_model, inv_sqrt_d);
    b.mlp_norm = Tensor2(1, cfg.d_model, 1.0);
    b.gate = detail::normal_tensor(rng, cfg.d_ff, cfg.d_model, inv_sqrt_d);
    b.up = detail::normal_tensor(rng, cfg.d_ff, cfg.d_model, inv_sqrt_d);
    b.down = detail::normal_tensor(rng, cfg.d_model, cfg.d_ff, 1.0 / std::sqrt(static_cast<double>(cfg.d_ff)));
  }
  p.final_norm = Tensor2(1, cfg.d_model, 1.0);
  p.lm_head = detail::normal_tensor(rng, cfg.vocab_size, cfg.d_model, inv_sqrt_d);
  return p;
}

/// Closed-form parameter count for a configuration.
inline std::size_t expected_parameter_count(const ToyVlmConfig& c) {
  const std::size_t d = c.d_model;
  const std::size_t per_block = 2 * d + 4 * d * d + 3 * c.d_ff * d;
  return c.vocab_size * d + c.n_vision_tokens * d + c.max_seq * d + c.n_blocks * per_block + d +
         c.vocab_size * d;
}

/// Parameters bound onto a tape. Gradients are tracked only for names accepted
/// by the trainable predicate.
struct ParamVars {
  Var tok_emb, vis_emb, pos_emb;
  struct Block {
    Var attn_norm, wq, wk, wv, wo, mlp_norm, gate, up, down;
  };
  std::vector<Block> blocks;
  Var final_norm, lm_head;
};

using TrainablePredicate = std::function<bool(const std::string&)>;

inline ParamVars bind_params(Tape& tape, const ToyVlmParams& p, const TrainablePredicate& trainable = {}) {
  auto bind = [&](const std::string& name, const Tensor2& t) {
    return tape.borrow(t, trainable ? trainable(name) : false);
  };
  ParamVars v;
  v.tok_emb = bind("tok_emb", p.tok_emb);
  v.vis_emb = bind("vis_emb", p.vis_emb);
  v.pos_emb = bind("pos_emb", p.pos_emb);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const std::string pre = "blocks." + std::to_string(b) + ".";
    const BlockParams& blk = p.blocks[b];
    v.blocks.push_back({bind(pre + "attn_norm", blk.attn_norm), bind(pre + "wq", blk.wq),
                        bind(pre + "wk", blk.wk), bind(pre + "wv", blk.wv), bind(pre + "wo", blk.wo),
                        bind(pre + "mlp_norm", blk.mlp_norm), bind(pre + "gate", blk.gate),
                        bind(pre + "up", blk.up), bind(pre + "down", blk.down)});
  }
  v.final_norm = bind("final_norm", p.final_norm);
  v.lm_head = bind("lm_head", p.lm_head);
  return v;
}

struct ForwardOptions {
  bool capture_attention = false;
  bool capture_mlp_inputs = false;
  /// When false only the final position's logits are produced.
  bool all_logits = true;
};

/// Values captured by a forward pass.
struct ForwardTrace {
  /// Logits for positions [first_logit_position, seq_len).
  Tensor2 logits;
  std::size_t first_logit_position = 0;
  std::size_t seq_len = 0;
  std::size_t n_vision = 0;
  /// attention[block][head]: language rows x vision columns of the softmax map.
  std::vector<std::vector<Tensor2>> attention;
  /// mlp_inputs[block]: normalised MLP input activations, seq_len x d_model.
  std::vector<Tensor2> mlp_inputs;
};

namespace detail {

inline void validate_tokens(const ToyVlmConfig& cfg, std::span<const std::size_t> tokens) {
  if (tokens.size() > cfg.max_seq) {
    throw InputError("forward: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq");
  }
  if (tokens.size() < cfg.n_vision_tokens || tokens.empty()) {
    throw InputError("forward: sequence shorter than the vision prefix");
  }
  for (std::size_t id : tokens) {
    if (id >= cfg.vocab_size) throw InputError("forward: token id " + std::to_string(id) + " out of vocab");
  }
}

inline void validate_masks(const ToyVlmParams& p, const MaskSet& masks) {
  if (masks.empty()) return;
  if (masks.blocks.size() != p.blocks.size()) throw UsageError("forward: mask block count mismatch");
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    if (masks.blocks[b].size() != p.blocks[b].gate.rows()) {
      throw UsageError("forward: mask width mismatch in block " + std::to_string(b));
    }
  }
}

}  // namespace detail

/// Taped forward pass. Masks multiply the MLP intermediate activations, which
/// is the same as zeroing gate/up rows and down columns of masked neurons.
/// Returns the logits node (all positions or just the last, per `opts`).
inline Var forward_vars(Tape& tape, const ToyVlmParams& p, const ParamVars& v, const MaskSet& masks,
                        std::span<const std::size_t> tokens, const ForwardOptions& opts = {},
                        ForwardTrace* trace = nullptr) {
  using namespace diffmath;
  const ToyVlmConfig& cfg = p.config;
  detail::validate_tokens(cfg, tokens);
  detail::validate_masks(p, masks);
  const std::size_t n = tokens.size();
  const std::size_t nv = cfg.n_vision_tokens;
  const std::size_t dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  if (trace) {
    trace->seq_len = n;
    trace->n_vision = nv;
    trace->attention.assign(opts.capture_attention ? p.blocks.size() : 0, {});
    trace->mlp_inputs.assign(opts.capture_mlp_inputs ? p.blocks.size() : 0, {});
  }

  std::vector<std::size_t> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = i;
  Var x = gather_rows(v.tok_emb, tokens) + gather_rows(v.pos_emb, positions);
  if (nv > 0) {
    std::vector<Var> parts = {v.vis_emb};
    if (n > nv) parts.push_back(tape.constant(Tensor2(n - nv, cfg.d_model)));
    x = x + concat_rows(parts);
  }

  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const auto& blk = v.blocks[b];
    Var h = mul_row(rms_norm_rows(x), blk.attn_norm);
    Var q = matmul_nt(h, blk.wq);
    Var k = matmul_nt(h, blk.wk);
    Var val = matmul_nt(h, blk.wv);
    std::vector<Var> heads;
    heads.reserve(cfg.n_heads);
    for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
      Var qh = slice_cols(q, hd * dh, (hd + 1) * dh);
      Var kh = slice_cols(k, hd * dh, (hd + 1) * dh);
      Var vh = slice_cols(val, hd * dh, (hd + 1) * dh);
      Var attn = causal_softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt_dh));
      if (trace && opts.capture_attention) {
        const Tensor2& a = attn.value();
        Tensor2 slice(n - nv, nv);
        for (std::size_t t = nv; t < n; ++t)
          for (std::size_t c = 0; c < nv; ++c) slice(t - nv, c) = a(t, c);
        trace->attention[b].push_back(std::move(slice));
      }
      heads.push_back(matmul(attn, vh));
    }
    x = x + matmul_nt(concat_cols(heads), blk.wo);

    Var m = mul_row(rms_norm_rows(x), blk.mlp_norm);
    if (trace && opts.capture_mlp_inputs) trace->mlp_inputs[b] = m.value();
    Var inner = tanh(matmul_nt(m, blk.gate)) * matmul_nt(m, blk.up);
    if (!masks.empty()) {
      const auto& mb = masks.blocks[b];
      Tensor2 mrow(1, mb.size());
      for (std::size_t j = 0; j < mb.size(); ++j) mrow[j] = mb[j] ? 1.0 : 0.0;
      inner = mul_row(inner, tape.constant(std::move(mrow)));
    }
    x = x + matmul_nt(inner, blk.down);
  }

  Var last = opts.all_logits ? x : slice_rows(x, n - 1, n);
  Var logits = matmul_nt(mul_row(rms_norm_rows(last), v.final_norm), v.lm_head);
  if (trace) {
    trace->logits = logits.value();
    trace->first_logit_position = opts.all_logits ? 0 : n - 1;
  }
  return logits;
}

/// Gradient-free forward pass; parameters are read-only and may be shared by
/// concurrent callers.
inline ForwardTrace forward(const ToyVlmParams& p, const MaskSet& masks, std::span<const std::size_t> tokens,
                            const ForwardOptions& opts = {}) {
  Tape tape;
  const ParamVars v = bind_params(tape, p);
  ForwardTrace trace;
  forward_vars(tape, p, v, masks, tokens, opts, &trace);
  return trace;
}

/// Numerically stable softmax of a logit row.
inline std::vector<double> softmax(std::span<const double> logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (double l : logits) m = std::max(m, l);
  std::vector<double> out(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    s += out[i];
  }
  for (double& o : out) o /= s;
  return out;
}

/// Probability vector over the vocabulary at `answer_position`.
inline std::vector<double> answer_distribution(const ForwardTrace& trace, std::size_t answer_position) {
  if (answer_position >= trace.seq_len || answer_position < trace.first_logit_position) {
    throw InputError("answer_distribution: position " + std::to_string(answer_position) +
                     " outside the computed logits");
  }
  return softmax(trace.logits.row(answer_position - trace.first_logit_position));
}

}  // namespace planforge::toyvlm
