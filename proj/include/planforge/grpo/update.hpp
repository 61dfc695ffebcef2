#pragma once

#include <cmath>
#include <span>
#include <string>

#include "planforge/diffmath/tape.hpp"
#include "planforge/error.hpp"
#include "planforge/policy/network.hpp"

namespace planforge::grpo {

using diffmath::Tensor2;
using policy::PolicyAction;
using policy::PolicyParams;

struct GradientResult {
  double loss = 0.0;
  double entropy = 0.0;
  double grad_norm = 0.0;
  bool finite = true;
  PolicyParams grads;
};

/// loss = -gamma * (1/G) * sum_g log pi(a_g) * A_g - lambda_h * H(pi)
inline GradientResult policy_gradient(const PolicyParams& phi, const Tensor2& features,
                                      std::span<const PolicyAction> actions, std::span<const double> advantages,
                                      double gamma, double lambda_h) {
  if (actions.size() != advantages.size() || actions.empty()) {
    throw DimensionError("policy_gradient: one advantage per action required");
  }
  diffmath::Tape tape;
  const auto v = policy::bind_policy(tape, phi, true);
  const auto heads = policy::policy_forward(tape, v, features);
  diffmath::Var pg = tape.constant(Tensor2::scalar(0.0));
  for (std::size_t g = 0; g < actions.size(); ++g) {
    pg = pg + policy::log_prob(heads, actions[g].s, actions[g].p) * advantages[g];
  }
  const auto ent = policy::entropy(heads);
  const double inv_g = 1.0 / static_cast<double>(actions.size());
  const auto loss = pg * (-gamma * inv_g) - ent * lambda_h;

  GradientResult r;
  r.loss = loss.item();
  r.entropy = ent.item();
  r.finite = std::isfinite(r.loss);
  if (!r.finite) return r;
  tape.backward(loss);
  r.grads = policy::collect_grads(phi, v);
  double sq = 0.0;
  r.grads.for_each([&](const std::string&, const Tensor2& t) {
    for (double x : t.data()) sq += x * x;
  });
  r.grad_norm = std::sqrt(sq);
  r.finite = std::isfinite(r.grad_norm);
  return r;
}

/// phi -= lr * g, with g rescaled so its global L2 norm is at most `clip` (clip <= 0 disables).
inline void apply_gradient(PolicyParams& phi, const GradientResult& g, double lr, double clip) {
  const double scale = (clip > 0.0 && g.grad_norm > clip) ? clip / g.grad_norm : 1.0;
  std::vector<const Tensor2*> grads;
  g.grads.for_each([&](const std::string&, const Tensor2& t) { grads.push_back(&t); });
  std::size_t k = 0;
  phi.for_each_mut([&](const std::string&, Tensor2& t) {
    const Tensor2& d = *grads[k++];
    for (std::size_t i = 0; i < t.size(); ++i) t[i] -= lr * scale * d[i];
  });
}

}  // namespace planforge::grpo
