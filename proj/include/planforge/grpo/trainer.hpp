#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "planforge/core/rng.hpp"
#include "planforge/grpo/environment.hpp"
#include "planforge/grpo/sampler.hpp"
#include "planforge/grpo/update.hpp"
#include "planforge/policy/network.hpp"
#include "planforge/policy/plan.hpp"
#include "planforge/rewards/normalizer.hpp"
#include "planforge/rewards/stability.hpp"

namespace planforge::grpo {

struct TrainerConfig {
  std::size_t group_size = 8;
  std::size_t episodes = 200;
  double learning_rate = 3e-3;
  double entropy_coefficient = 0.01;
  double grad_clip = 1.0;
  Budget budget{0.2, 0.5};
  double kappa = 1.0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  double normalizer_momentum = 0.99;
  rewards::GateConfig gate;
  PreferenceSampler sampler;

  policy::PlanMapperConfig mapper() const { return {budget.c_min, budget.c_max, kappa}; }

  void validate() const {
    if (group_size < 2) throw ConfigError("group_size must be at least 2");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(entropy_coefficient >= 0.0)) throw ConfigError("entropy coefficient must be non-negative");
    mapper().validate();
    gate.validate();
    sampler.validate();
  }
};

struct MemberRecord {
  double s = 0.0;
  std::vector<double> p;
  double log_prob = 0.0;
  policy::PruningPlan plan;
  rewards::ObjectiveVector objectives;
  double n_rob = 0.0;
  double n_util = 0.0;
  double reward = 0.0;
  double advantage = 0.0;
};

struct EpisodeRecord {
  std::size_t episode = 0;
  Preference preference;
  std::vector<MemberRecord> members;
  rewards::GateOutput gate;
  double loss = 0.0;
  double entropy = 0.0;
  double grad_norm = 0.0;
  bool skipped = false;
  double mean_reward = 0.0;      // mean of the normalised scalar rewards
  double mean_raw_reward = 0.0;  // mean of w . (J_rob, J_util, J_comp) before normalisation
};

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers. Output order is
/// fixed by index, so results do not depend on the worker count.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min(threads, n);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Plan whose ratios are the group mean of the members' ratios.
inline policy::PruningPlan mean_ratio_plan(const std::vector<MemberRecord>& members,
                                           const std::vector<std::size_t>& widths) {
  policy::PruningPlan plan = members.front().plan;
  std::fill(plan.ratios.begin(), plan.ratios.end(), 0.0);
  for (const auto& m : members)
    for (std::size_t l = 0; l < plan.ratios.size(); ++l) plan.ratios[l] += m.plan.ratios[l];
  for (double& r : plan.ratios) r /= static_cast<double>(members.size());
  plan.saturated_layers.clear();
  plan.realized_sparsity = policy::realized_sparsity(plan.ratios, widths);
  return plan;
}

class Trainer {
 public:
  Trainer(const PlanEnvironment& env, TrainerConfig cfg, policy::PolicyParams init)
      : env_(env),
        cfg_(std::move(cfg)),
        phi_(std::move(init)),
        gate_(env.reference_flow(), cfg_.gate),
        norm_rob_(cfg_.normalizer_momentum),
        norm_util_(cfg_.normalizer_momentum) {
    cfg_.validate();
    if (env_.num_layers() < 2) throw ConfigError("policy needs at least two prunable layers");
  }

  /// One GRPO episode: rollouts, gate, normalisation, advantages and a gradient step.
  EpisodeRecord step() {
    EpisodeRecord rec;
    rec.episode = episode_;
    auto pref_rng = make_stream(cfg_.seed, {episode_, 0});
    rec.preference = cfg_.sampler.sample(pref_rng);
    const auto states = env_.states(cfg_.budget, rec.preference);
    const Tensor2 features = calib::feature_matrix(states);
    const auto heads = policy::policy_forward(phi_, states);
    const std::size_t G = cfg_.group_size;

    std::vector<PolicyAction> actions(G);
    rec.members.resize(G);
    const auto mapper = cfg_.mapper();
    parallel_for(G, cfg_.threads, [&](std::size_t g) {
      auto rng = make_stream(cfg_.seed, {episode_, 1 + g});
      actions[g] = policy::sample_action(heads, rng);
      auto& m = rec.members[g];
      m.s = actions[g].s;
      m.p = actions[g].p;
      m.log_prob = actions[g].log_prob;
      m.plan = policy::map_plan(m.s, m.p, mapper, env_.layer_widths(), rec.preference);
      m.objectives = env_.evaluate(m.plan, cfg_.budget);
    });

    // Single writer from here on.
    const auto mean_plan = mean_ratio_plan(rec.members, env_.layer_widths());
    rec.gate = gate_.step(gate_.rho(env_.flow(mean_plan)));

    std::vector<double> rob, util;
    for (const auto& m : rec.members) {
      rob.push_back(m.objectives.j_rob);
      util.push_back(m.objectives.j_util);
    }
    const auto n_rob = norm_rob_.normalize(rob);
    const auto n_util = norm_util_.normalize(util);
    std::vector<double> rewards(G);
    for (std::size_t g = 0; g < G; ++g) {
      auto& m = rec.members[g];
      m.n_rob = n_rob[g];
      m.n_util = n_util[g];
      m.reward = scalar_reward(rec.preference, m.n_rob, m.n_util, m.objectives.j_comp);
      rewards[g] = m.reward;
      rec.mean_reward += m.reward / static_cast<double>(G);
      rec.mean_raw_reward +=
          scalar_reward(rec.preference, m.objectives.j_rob, m.objectives.j_util, m.objectives.j_comp) /
          static_cast<double>(G);
    }
    const auto adv = group_advantages(rewards);
    for (std::size_t g = 0; g < G; ++g) rec.members[g].advantage = adv[g];

    const auto grad =
        policy_gradient(phi_, features, actions, adv, rec.gate.gamma, cfg_.entropy_coefficient);
    rec.loss = grad.loss;
    rec.entropy = grad.entropy;
    rec.grad_norm = grad.grad_norm;
    if (!grad.finite) {
      rec.skipped = true;
    } else {
      apply_gradient(phi_, grad, cfg_.learning_rate, cfg_.grad_clip);
    }
    ++episode_;
    return rec;
  }

  const policy::PolicyParams& policy() const noexcept { return phi_; }
  const rewards::StabilityGate& gate() const noexcept { return gate_; }
  std::size_t episode() const noexcept { return episode_; }

 private:
  const PlanEnvironment& env_;
  TrainerConfig cfg_;
  policy::PolicyParams phi_;
  rewards::StabilityGate gate_;
  rewards::RunningNormalizer norm_rob_, norm_util_;
  std::uint64_t episode_ = 0;
};

struct TrainResult {
  policy::PolicyParams final_policy;
  policy::PolicyParams best_policy;
  double best_mean_reward = -std::numeric_limits<double>::infinity();
  std::size_t best_episode = 0;
  std::vector<EpisodeRecord> log;
};

/// Runs cfg.episodes steps. The best policy is the one that generated the
/// episode with the highest mean raw scalarised reward.
inline TrainResult train(const PlanEnvironment& env, const TrainerConfig& cfg, const policy::PolicyParams& init,
                         const std::function<void(const EpisodeRecord&)>& on_episode = {}) {
  Trainer t(env, cfg, init);
  TrainResult r;
  r.best_policy = init;
  for (std::size_t e = 0; e < cfg.episodes; ++e) {
    const auto before = t.policy();
    auto rec = t.step();
    if (!rec.skipped && rec.mean_raw_reward > r.best_mean_reward) {
      r.best_mean_reward = rec.mean_raw_reward;
      r.best_policy = before;
      r.best_episode = rec.episode;
    }
    if (on_episode) on_episode(rec);
    r.log.push_back(std::move(rec));
  }
  r.final_policy = t.policy();
  return r;
}

/// One JSON line per plan of the episode.
inline std::vector<std::string> episode_log_lines(const EpisodeRecord& rec) {
  std::vector<std::string> lines;
  for (std::size_t g = 0; g < rec.members.size(); ++g) {
    const auto& m = rec.members[g];
    nlohmann::ordered_json j;
    j["episode"] = rec.episode;
    j["member"] = g;
    j["preference"] = {rec.preference.rob, rec.preference.util, rec.preference.comp};
    j["ratios"] = m.plan.ratios;
    j["sparsity"] = m.plan.realized_sparsity;
    j["j_rob"] = m.objectives.j_rob;
    j["j_util"] = m.objectives.j_util;
    j["j_comp"] = m.objectives.j_comp;
    j["rho_syn"] = rec.gate.rho;
    j["psi"] = rec.gate.psi;
    j["gamma"] = rec.gate.gamma;
    j["reward"] = m.reward;
    j["advantage"] = m.advantage;
    j["skipped"] = rec.skipped;
    lines.push_back(j.dump());
  }
  return lines;
}

}  // namespace planforge::grpo
