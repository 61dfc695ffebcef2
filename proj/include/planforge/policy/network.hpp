#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "planforge/calib/calibration.hpp"
#include "planforge/diffmath/tape.hpp"
#include "planforge/error.hpp"
#include "planforge/policy/distributions.hpp"

namespace planforge::policy {

inline constexpr double kEtaFloor = 0.1;

struct PolicyConfig {
  std::size_t hidden = 32;
  std::uint64_t seed = 0;

  bool operator==(const PolicyConfig&) const = default;
};

/// Shared two-layer encoder over layer-state features, a Beta head on the
/// mean-pooled encoding and a per-layer Dirichlet head. The first hidden layer
/// is scaled by (1 + w F^T) so the allocation can depend on the preference
/// jointly with the layer descriptors rather than only through a common shift.
struct PolicyParams {
  PolicyConfig config;
  Tensor2 w1, b1;              // H x F, 1 x H
  Tensor2 film;                // H x 3, preference modulation
  Tensor2 w2, b2;              // H x H, 1 x H
  Tensor2 w_budget, b_budget;  // 2 x H, 1 x 2  -> raw (alpha, beta)
  Tensor2 w_alloc, b_alloc;    // 1 x H, 1 x 1  -> raw eta per layer

  template <class Self, class Fn>
  static void visit(Self& self, Fn&& fn) {
    fn(std::string("w1"), self.w1);
    fn(std::string("b1"), self.b1);
    fn(std::string("film"), self.film);
    fn(std::string("w2"), self.w2);
    fn(std::string("b2"), self.b2);
    fn(std::string("w_budget"), self.w_budget);
    fn(std::string("b_budget"), self.b_budget);
    fn(std::string("w_alloc"), self.w_alloc);
    fn(std::string("b_alloc"), self.b_alloc);
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

  bool operator==(const PolicyParams&) const = default;
};

/// Encoder weights ~ N(0, 1/fan_in), biases and output heads zero.
inline PolicyParams init_policy(const PolicyConfig& cfg) {
  if (cfg.hidden == 0) throw ConfigError("policy hidden width must be positive");
  const std::size_t h = cfg.hidden, f = calib::kFeatureDim;
  std::mt19937_64 rng(cfg.seed ^ 0x9011c7ULL);
  auto normal = [&rng](std::size_t r, std::size_t c, double sd) {
    std::normal_distribution<double> n(0.0, sd);
    Tensor2 t(r, c);
    for (auto& v : t.data()) v = n(rng);
    return t;
  };
  PolicyParams p;
  p.config = cfg;
  p.w1 = normal(h, f, 1.0 / std::sqrt(static_cast<double>(f)));
  p.b1 = Tensor2(1, h);
  p.film = normal(h, 3, 1.0);
  p.w2 = normal(h, h, 1.0 / std::sqrt(static_cast<double>(h)));
  p.b2 = Tensor2(1, h);
  p.w_budget = Tensor2(2, h);
  p.b_budget = Tensor2(1, 2);
  p.w_alloc = Tensor2(1, h);
  p.b_alloc = Tensor2(1, 1);
  return p;
}

struct PolicyVars {
  Var w1, b1, film, w2, b2, w_budget, b_budget, w_alloc, b_alloc;
};

inline PolicyVars bind_policy(Tape& tape, const PolicyParams& p, bool requires_grad) {
  PolicyVars v;
  v.w1 = tape.borrow(p.w1, requires_grad);
  v.b1 = tape.borrow(p.b1, requires_grad);
  v.film = tape.borrow(p.film, requires_grad);
  v.w2 = tape.borrow(p.w2, requires_grad);
  v.b2 = tape.borrow(p.b2, requires_grad);
  v.w_budget = tape.borrow(p.w_budget, requires_grad);
  v.b_budget = tape.borrow(p.b_budget, requires_grad);
  v.w_alloc = tape.borrow(p.w_alloc, requires_grad);
  v.b_alloc = tape.borrow(p.b_alloc, requires_grad);
  return v;
}

/// Gradients of every policy tensor, in PolicyParams layout.
inline PolicyParams collect_grads(const PolicyParams& p, const PolicyVars& v) {
  PolicyParams g = p;
  g.w1 = v.w1.grad();
  g.b1 = v.b1.grad();
  g.film = v.film.grad();
  g.w2 = v.w2.grad();
  g.b2 = v.b2.grad();
  g.w_budget = v.w_budget.grad();
  g.b_budget = v.b_budget.grad();
  g.w_alloc = v.w_alloc.grad();
  g.b_alloc = v.b_alloc.grad();
  return g;
}

struct HeadVars {
  Var alpha, beta;  // 1x1
  Var eta;          // 1xL
};

struct Heads {
  double alpha = 1.0;
  double beta = 1.0;
  std::vector<double> eta;

  bool operator==(const Heads&) const = default;
};

inline Heads head_values(const HeadVars& h) {
  const auto e = h.eta.value().data();
  return {h.alpha.item(), h.beta.item(), std::vector<double>(e.begin(), e.end())};
}

/// features: L x kFeatureDim. The preference vector is part of every row.
inline HeadVars policy_forward(Tape& tape, const PolicyVars& v, const Tensor2& features) {
  using namespace diffmath;
  const std::size_t L = features.rows();
  if (L < 2) throw ConfigError("policy needs at least two prunable layers");
  if (features.cols() != calib::kFeatureDim) throw DimensionError("policy feature width mismatch");
  Var x = tape.constant(features);
  Var pref = slice_cols(x, calib::kPreferenceOffset, calib::kFeatureDim);
  Var h1 = tanh(add_row(matmul_nt(x, v.w1), v.b1)) * (matmul_nt(pref, v.film) + 1.0);
  Var h2 = tanh(add_row(matmul_nt(h1, v.w2), v.b2));
  Var raw_budget = add_row(matmul_nt(mean_rows(h2), v.w_budget), v.b_budget);
  HeadVars out;
  out.alpha = softplus(slice_cols(raw_budget, 0, 1)) + 1.0;
  out.beta = softplus(slice_cols(raw_budget, 1, 2)) + 1.0;
  Var ones = tape.constant(Tensor2(1, L, 1.0));
  Var raw_alloc = matmul_nt(v.w_alloc, h2) + matmul(v.b_alloc, ones);
  out.eta = softplus(raw_alloc) + kEtaFloor;
  return out;
}

inline Heads policy_forward(const PolicyParams& p, std::span<const calib::LayerState> states) {
  Tape tape;
  const PolicyVars v = bind_policy(tape, p, false);
  return head_values(policy_forward(tape, v, calib::feature_matrix(states)));
}

// ---- actions ----

struct PolicyAction {
  double s = 0.5;
  std::vector<double> p;
  double log_prob = 0.0;
  double entropy = 0.0;
};

inline double log_prob(const Heads& h, double s, std::span<const double> p) {
  return beta_log_pdf(h.alpha, h.beta, s) + dirichlet_log_pdf(h.eta, p);
}

inline double entropy(const Heads& h) { return beta_entropy(h.alpha, h.beta) + dirichlet_entropy(h.eta); }

inline Var log_prob(const HeadVars& h, double s, std::span<const double> p) {
  return beta_log_pdf(h.alpha, h.beta, s) + dirichlet_log_pdf(h.eta, p);
}

inline Var entropy(const HeadVars& h) { return beta_entropy(h.alpha, h.beta) + dirichlet_entropy(h.eta); }

namespace detail {
inline PolicyAction finish_action(const Heads& h, double s, const std::vector<double>& p) {
  PolicyAction a;
  a.s = clamp_unit(s);
  a.p = clamp_simplex(p);
  a.log_prob = log_prob(h, a.s, a.p);
  a.entropy = entropy(h);
  return a;
}
}  // namespace detail

template <class Rng>
PolicyAction sample_action(const Heads& h, Rng& rng) {
  const double s = sample_beta(h.alpha, h.beta, rng);
  return detail::finish_action(h, s, sample_dirichlet(h.eta, rng));
}

/// Distribution means: s = alpha / (alpha + beta), p = eta / sum(eta).
inline PolicyAction mean_action(const Heads& h) {
  detail::require_positive_params(h.alpha, "mean_action");
  detail::require_positive_params(h.beta, "mean_action");
  double z = 0.0;
  for (double e : h.eta) {
    detail::require_positive_params(e, "mean_action");
    z += e;
  }
  std::vector<double> p(h.eta.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = h.eta[i] / z;
  return detail::finish_action(h, h.alpha / (h.alpha + h.beta), p);
}

}  // namespace planforge::policy
