// Acceptance gate: one PASS/FAIL line per criterion; exit status 1 if any fail.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "planforge/calib/calibration.hpp"
#include "planforge/cli/commands.hpp"
#include "planforge/grpo/landscape.hpp"
#include "planforge/grpo/trainer.hpp"
#include "planforge/grpo/update.hpp"
#include "planforge/policy/distributions.hpp"
#include "planforge/policy/network.hpp"
#include "planforge/policy/plan.hpp"
#include "planforge/pruner/pruner.hpp"
#include "planforge/recovery/recovery.hpp"
#include "planforge/rewards/stability.hpp"
#include "support/gradcheck.hpp"
#include "support/reinforce_oracle.hpp"
#include "support/submatrix.hpp"

using namespace planforge;
using diffmath::Tape;
using diffmath::Tensor2;
using diffmath::Var;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor2 random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.5, double hi = 1.5) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor2 t(r, c);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

policy::PolicyParams random_policy(std::mt19937_64& rng, std::size_t hidden, double sd) {
  auto p = policy::init_policy({hidden, rng()});
  std::normal_distribution<double> n(0.0, sd);
  p.for_each_mut([&](const std::string&, Tensor2& t) {
    for (auto& v : t.data()) v = n(rng);
  });
  return p;
}

Preference random_preference(std::mt19937_64& rng) {
  const auto w = policy::sample_dirichlet(std::vector<double>{1.0, 1.0, 1.0}, rng);
  return {w[0], w[1], w[2]};
}

// ---- 1. gradient correctness ------------------------------------------------

struct GradCase {
  const char* name;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  bool positive;
  test_support::LossBuilder f;
};

std::vector<GradCase> primitive_cases() {
  using namespace diffmath;
  static const std::vector<std::size_t> ids = {2, 0, 3, 2};
  static const std::vector<std::size_t> cols = {3, 0};
  static const double s_val = 0.37;
  static const std::vector<double> p_val = {0.2, 0.5, 0.3};
  using S = std::vector<std::pair<std::size_t, std::size_t>>;
  return {
      {"matmul", S{{3, 4}, {4, 2}}, false, [](Tape&, auto& v) { return sum(tanh(matmul(v[0], v[1]))); }},
      {"matmul_nt", S{{3, 4}, {2, 4}}, false, [](Tape&, auto& v) { return sum(square(matmul_nt(v[0], v[1]))); }},
      {"add", S{{3, 3}, {3, 3}}, false, [](Tape&, auto& v) { return sum(square(v[0] + v[1])); }},
      {"sub", S{{3, 3}, {3, 3}}, false, [](Tape&, auto& v) { return sum(tanh(v[0] - v[1])); }},
      {"mul", S{{3, 3}, {3, 3}}, false, [](Tape&, auto& v) { return sum(v[0] * v[1] * v[0]); }},
      {"scale", S{{3, 3}}, false, [](Tape&, auto& v) { return sum(tanh(v[0] * -1.7)); }},
      {"add_scalar", S{{3, 3}}, false, [](Tape&, auto& v) { return sum(square(v[0] + 0.4)); }},
      {"add_row", S{{3, 4}, {1, 4}}, false, [](Tape&, auto& v) { return sum(tanh(add_row(v[0], v[1]))); }},
      {"mul_row", S{{3, 4}, {1, 4}}, false, [](Tape&, auto& v) { return sum(square(mul_row(v[0], v[1]))); }},
      {"tanh", S{{3, 3}}, false, [](Tape&, auto& v) { return sum(tanh(v[0]) * v[0]); }},
      {"softplus", S{{3, 3}}, false, [](Tape&, auto& v) { return sum(softplus(v[0]) * v[0]); }},
      {"sigmoid", S{{3, 3}}, false, [](Tape&, auto& v) { return sum(sigmoid(v[0]) * v[0]); }},
      {"exp", S{{3, 3}}, false, [](Tape&, auto& v) { return sum(exp(v[0]) * v[0]); }},
      {"log", S{{3, 3}}, true, [](Tape&, auto& v) { return sum(log(v[0]) * v[0]); }},
      {"square", S{{3, 3}}, false, [](Tape&, auto& v) { return sum(square(v[0]) * v[0]); }},
      {"relu", S{{3, 3}}, false, [](Tape&, auto& v) { return sum(relu(v[0]) * v[0]); }},
      {"lgamma", S{{2, 3}}, true, [](Tape&, auto& v) { return sum(lgamma(v[0]) * v[0]); }},
      {"digamma", S{{2, 3}}, true, [](Tape&, auto& v) { return sum(digamma(v[0]) * v[0]); }},
      {"sum", S{{3, 3}}, false, [](Tape&, auto& v) { return square(sum(v[0])); }},
      {"mean", S{{3, 3}}, false, [](Tape&, auto& v) { return square(mean(v[0])); }},
      {"mean_rows", S{{3, 4}}, false, [](Tape&, auto& v) { return sum(square(mean_rows(v[0]))); }},
      {"slice_rows", S{{4, 3}}, false, [](Tape&, auto& v) { return sum(square(slice_rows(v[0], 1, 3))); }},
      {"slice_cols", S{{3, 4}}, false, [](Tape&, auto& v) { return sum(square(slice_cols(v[0], 1, 3))); }},
      {"concat_cols", S{{3, 2}, {3, 3}}, false, [](Tape&, auto& v) {
         const std::vector<Var> parts = {v[0], v[1]};
         Var c = concat_cols(parts);
         return sum(square(c) * c);
       }},
      {"concat_rows", S{{2, 3}, {3, 3}}, false, [](Tape&, auto& v) {
         const std::vector<Var> parts = {v[0], v[1]};
         Var c = concat_rows(parts);
         return sum(square(c) * c);
       }},
      {"gather_rows", S{{4, 3}}, false, [](Tape&, auto& v) { return sum(square(gather_rows(v[0], ids)) * gather_rows(v[0], ids)); }},
      {"pick_cols", S{{3, 4}}, false, [](Tape&, auto& v) { return sum(square(pick_cols(v[0], cols)) * pick_cols(v[0], cols)); }},
      {"log_softmax_rows", S{{3, 4}}, false, [](Tape&, auto& v) { return sum(log_softmax_rows(v[0]) * v[0]); }},
      {"logsumexp_rows", S{{3, 4}}, false, [](Tape&, auto& v) { return sum(square(logsumexp_rows(v[0]))); }},
      {"causal_softmax_rows", S{{4, 4}}, false, [](Tape&, auto& v) { return sum(causal_softmax_rows(v[0]) * v[0]); }},
      {"rms_norm_rows", S{{3, 4}}, false, [](Tape&, auto& v) { return sum(rms_norm_rows(v[0]) * v[0]); }},
      {"beta_log_pdf", S{{1, 1}, {1, 1}}, true, [](Tape&, auto& v) { return policy::beta_log_pdf(v[0], v[1], s_val); }},
      {"beta_entropy", S{{1, 1}, {1, 1}}, true, [](Tape&, auto& v) { return policy::beta_entropy(v[0], v[1]); }},
      {"dirichlet_log_pdf", S{{1, 3}}, true, [](Tape&, auto& v) { return policy::dirichlet_log_pdf(v[0], p_val); }},
      {"dirichlet_entropy", S{{1, 3}}, true, [](Tape&, auto& v) { return policy::dirichlet_entropy(v[0]); }},
  };
}

Outcome criterion1() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::size_t cases = 0, failed = 0;
  std::string first_failure;
  const auto prims = primitive_cases();
  for (int rep = 0; rep < 4; ++rep) {
    for (const auto& c : prims) {
      std::vector<Tensor2> inputs;
      for (auto [r, k] : c.shapes) inputs.push_back(c.positive ? random_tensor(rng, r, k, 0.3, 4.0) : random_tensor(rng, r, k));
      const auto res = test_support::check_gradients(c.f, inputs, 1e-5, 1e-4);
      ++cases;
      if (!res.ok) {
        ++failed;
        if (first_failure.empty()) first_failure = std::string(c.name) + ": " + res.message;
      }
    }
  }
  const std::size_t prim_cases = cases;
  for (int trial = 0; trial < 12; ++trial) {
    const auto phi = random_policy(rng, 6, 0.5);
    const auto env = grpo::SyntheticLandscape::opposed(3 + trial % 3, rng());
    const Tensor2 x = calib::feature_matrix(env.states(Budget{}, random_preference(rng)));
    const auto action = policy::sample_action(policy::policy_forward(phi, env.states(Budget{}, Preference{})), rng);
    std::vector<Tensor2> inputs;
    phi.for_each([&](const std::string&, const Tensor2& t) { inputs.push_back(t); });
    test_support::LossBuilder f = [&](Tape& tape, const std::vector<Var>& in) {
      policy::PolicyVars v{in[0], in[1], in[2], in[3], in[4], in[5], in[6], in[7], in[8]};
      return policy::log_prob(policy::policy_forward(tape, v, x), action.s, action.p);
    };
    const auto res = test_support::check_gradients(f, inputs, 1e-5, 1e-4);
    ++cases;
    if (!res.ok) {
      ++failed;
      if (first_failure.empty()) first_failure = "policy log-prob: " + res.message;
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = failed == 0 && cases >= 100 && secs < 10.0;
  return {pass, fmt("%zu cases (%zu primitive, %zu policy), %zu failed, %.2fs (limit 10s)%s%s", cases, prim_cases,
                    cases - prim_cases, failed, secs, first_failure.empty() ? "" : "; first: ",
                    first_failure.c_str())};
}

// ---- 2. distribution math ---------------------------------------------------

Outcome criterion2() {
  const double beta11 = policy::beta_log_pdf(1.0, 1.0, 0.42);
  const double dir111 = policy::dirichlet_log_pdf(std::vector<double>{1, 1, 1}, std::vector<double>{0.2, 0.3, 0.5});
  std::mt19937_64 rng(202);
  double mean = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) mean += policy::sample_beta(2.0, 6.0, rng);
  mean /= n;
  const bool pass = std::abs(beta11) < 1e-12 && std::abs(dir111 - std::numbers::ln2) < 1e-12 &&
                    std::abs(mean - 0.25) <= 0.01;
  return {pass, fmt("Beta(1,1) log-pdf %.3g, Dirichlet(1,1,1) log-pdf %.12f (ln2 %.12f), Beta(2,6) MC mean %.5f over 1e5",
                    beta11, dir111, std::numbers::ln2, mean)};
}

// ---- 3. plan-mapping budget invariant ---------------------------------------

std::size_t round_half_even(double x) {
  const double f = std::floor(x);
  const double frac = x - f;
  auto fi = static_cast<std::size_t>(f);
  if (frac > 0.5) return fi + 1;
  if (frac < 0.5) return fi;
  return fi % 2 == 0 ? fi : fi + 1;
}

Outcome criterion3() {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t d_ff = 64, L = 4;
  const std::vector<std::size_t> widths(L, d_ff);
  const policy::PlanMapperConfig cfg{0.2, 0.5, 1.0};
  std::size_t unsaturated = 0, saturated = 0, bad_bounds = 0, bad_budget = 0, bad_oracle = 0, saturated_below = 0,
              saturated_clear_loss = 0;
  double worst = 0.0;
  while (unsaturated < 10000) {
    const double conc = u(rng) < 0.5 ? 0.3 : 3.0;
    const auto p = policy::sample_dirichlet(std::vector<double>(L, conc), rng);
    const double s = u(rng);
    const auto plan = policy::map_plan(s, p, cfg, widths);
    const double target = cfg.c_min + s * (cfg.c_max - cfg.c_min);
    std::size_t pruned = 0;
    double lost = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      const double raw = cfg.kappa * target * static_cast<double>(L) * p[l];
      if (raw > 1.0) lost += (raw - 1.0) / static_cast<double>(L);
      pruned += round_half_even(std::min(std::max(raw, 0.0), 1.0) * static_cast<double>(d_ff));
      if (plan.ratios[l] < 0.0 || plan.ratios[l] > 1.0) ++bad_bounds;
    }
    const double oracle = static_cast<double>(pruned) / static_cast<double>(L * d_ff);
    if (plan.realized_sparsity != oracle) ++bad_oracle;
    if (plan.saturated_layers.empty()) {
      ++unsaturated;
      const double err = std::abs(plan.realized_sparsity - target);
      worst = std::max(worst, err);
      if (err > 1.0 / static_cast<double>(d_ff)) ++bad_budget;
    } else {
      ++saturated;
      // Rounding can add at most half a row per layer; beyond that the loss must show.
      if (lost > 0.5 / static_cast<double>(d_ff)) {
        ++saturated_clear_loss;
        saturated_below += plan.realized_sparsity < target;
      }
    }
  }
  const bool pass = bad_bounds == 0 && bad_budget == 0 && bad_oracle == 0 && saturated > 0 &&
                    saturated_below == saturated_clear_loss;
  return {pass, fmt("%zu unsaturated cases, max |realized - target| %.5f (limit %.5f), %zu budget violations, "
                    "%zu out-of-range ratios, %zu saturated cases (%zu/%zu with clear loss fall below target), "
                    "%zu integer-oracle mismatches",
                    unsaturated, worst, 1.0 / d_ff, bad_budget, bad_bounds, saturated, saturated_below,
                    saturated_clear_loss, bad_oracle)};
}

// ---- 4. pruning-operator equivalence ----------------------------------------

std::vector<std::size_t> random_tokens(std::mt19937_64& rng, const toyvlm::ToyVlmConfig& c) {
  std::uniform_int_distribution<std::size_t> obj(toyvlm::vocab::kFirstObject, c.vocab_size - 1);
  std::uniform_int_distribution<std::size_t> any(0, c.vocab_size - 1);
  std::uniform_int_distribution<std::size_t> len(c.n_vision_tokens + 1, c.max_seq);
  std::vector<std::size_t> t(len(rng));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = i < c.n_vision_tokens ? obj(rng) : any(rng);
  return t;
}

toyvlm::MaskSet random_mask(std::mt19937_64& rng, std::size_t blocks, std::size_t width, double keep) {
  std::bernoulli_distribution b(keep);
  auto m = toyvlm::MaskSet::full(blocks, width);
  for (auto& blk : m.blocks)
    for (auto& v : blk) v = b(rng);
  return m;
}

Outcome criterion4() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    toyvlm::ToyVlmConfig mc;
    mc.seed = trial / 10;
    const auto p = toyvlm::init_model(mc);
    const auto m = random_mask(rng, mc.n_blocks, mc.d_ff, u(rng));
    const auto t = random_tokens(rng, mc);
    const auto a = pruner::forward(pruner::apply_plan(p, m), t).logits;
    const auto b = toyvlm::forward(test_support::submatrix_params(p, m), toyvlm::MaskSet{}, t).logits;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return {worst <= 1e-10, fmt("100 random masks, max |masked - submatrix| logit difference %.3g (limit 1e-10)", worst)};
}

// ---- 5. SynFlow properties --------------------------------------------------

Outcome criterion5() {
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  bool full_zero = true;
  for (std::uint64_t s = 0; s < 5; ++s) {
    toyvlm::ToyVlmConfig mc;
    mc.seed = s;
    const auto p = toyvlm::init_model(mc);
    const double ref = rewards::synflow_score(p, toyvlm::MaskSet{});
    full_zero &= rewards::flow_log_ratio(rewards::synflow_score(p, toyvlm::MaskSet::full(mc.n_blocks, mc.d_ff)), ref) == 0.0;
  }
  toyvlm::ToyVlmConfig mc;
  const auto p = toyvlm::init_model(mc);
  std::size_t violations = 0;
  for (int pair = 0; pair < 1000; ++pair) {
    const auto outer = random_mask(rng, mc.n_blocks, mc.d_ff, u(rng));
    auto inner = outer;
    const double drop = u(rng);
    for (auto& blk : inner.blocks)
      for (auto& v : blk)
        if (v && u(rng) < drop) v = 0;
    if (rewards::synflow_score(p, inner) > rewards::synflow_score(p, outer)) ++violations;
  }
  rewards::StabilityGate gate(1.0);
  std::size_t gate_bad = 0;
  for (int band = 0; band < 100; ++band) {
    const double lo = -3.0 * u(rng), hi = lo + 3.0 * u(rng);
    gate.set_band(lo, hi);
    for (int k = 0; k < 100; ++k) {
      const double rho = -6.0 + 8.0 * u(rng);
      const auto g = gate.step(rho);
      const bool in_band = rho >= lo && rho <= hi;
      const double gmin = gate.config().gamma_min;
      if (!(g.gamma >= gmin && g.gamma <= 1.0) || ((g.gamma == 1.0) != in_band)) ++gate_bad;
    }
  }
  const bool pass = full_zero && violations == 0 && gate_bad == 0;
  return {pass, fmt("full-mask rho exactly 0: %s; %zu/1000 nested-pair monotonicity violations; "
                    "%zu/10000 gate checks violating gamma in [gamma_min,1] with gamma==1 iff in band",
                    full_zero ? "yes" : "no", violations, gate_bad)};
}

// ---- 6. GRPO mechanics ------------------------------------------------------

double max_param_diff(const policy::PolicyParams& a, const policy::PolicyParams& b) {
  std::vector<const Tensor2*> bs;
  b.for_each([&](const std::string&, const Tensor2& t) { bs.push_back(&t); });
  double worst = 0.0;
  std::size_t i = 0;
  a.for_each([&](const std::string&, const Tensor2& t) {
    for (std::size_t k = 0; k < t.size(); ++k) worst = std::max(worst, std::abs(t[k] - (*bs[i])[k]));
    ++i;
  });
  return worst;
}

Outcome criterion6() {
  std::mt19937_64 rng(606);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> gsize(2, 32);
  double worst_sum = 0.0;
  for (int g = 0; g < 10000; ++g) {
    std::vector<double> r(gsize(rng));
    const double scale = std::exp(2.0 * n(rng));
    for (auto& v : r) v = scale * n(rng);
    double s = 0.0;
    for (double a : grpo::group_advantages(r)) s += a;
    worst_sum = std::max(worst_sum, std::abs(s));
  }
  double worst_step = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto phi = random_policy(rng, 8, 0.5);
    const auto env = grpo::SyntheticLandscape({3.0, 0.5}, {0.5, 3.0}, {32, 32});
    const auto states = env.states(Budget{}, random_preference(rng));
    const Tensor2 x = calib::feature_matrix(states);
    const auto heads = policy::policy_forward(phi, states);
    std::vector<policy::PolicyAction> actions;
    std::vector<double> rewards, s;
    std::vector<std::vector<double>> p;
    for (int g = 0; g < 8; ++g) {
      actions.push_back(policy::sample_action(heads, rng));
      rewards.push_back(n(rng));
      s.push_back(actions.back().s);
      p.push_back(actions.back().p);
    }
    const auto adv = grpo::group_advantages(rewards);
    const double lr = 0.01, clip = trial % 2 ? 0.0 : 0.05;
    auto updated = phi;
    grpo::apply_gradient(updated, grpo::policy_gradient(phi, x, actions, adv, 1.0, 0.0), lr, clip);
    const auto oracle = test_support::reinforce_step(phi, x, s, p, adv, 1.0, lr, clip);
    worst_step = std::max(worst_step, max_param_diff(updated, oracle.updated));
  }
  const bool pass = worst_sum <= 1e-9 && worst_step <= 1e-8;
  return {pass, fmt("max |sum of advantages| %.3g over 1e4 groups (limit 1e-9); max parameter difference vs "
                    "independent REINFORCE step %.3g over 20 two-layer cases (limit 1e-8)",
                    worst_sum, worst_step)};
}

// ---- 7 & 8. controllability and learning progress ---------------------------

struct BanditRun {
  bool ordered = false;
  bool progressed = false;
  double rob_gap = 0.0, util_gap = 0.0, first = 0.0, last = 0.0;
};

std::vector<BanditRun> bandit_runs(double& secs) {
  const auto t0 = Clock::now();
  std::vector<BanditRun> out;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto env = grpo::SyntheticLandscape::opposed(4, seed);
    grpo::TrainerConfig cfg;
    cfg.episodes = 1000;
    cfg.group_size = 8;
    cfg.learning_rate = 1e-2;
    cfg.seed = seed;
    const auto r = grpo::train(env, cfg, policy::init_policy({32, seed}));
    const policy::PolicyCheckpoint ck{r.final_policy, cfg.mapper(), env.profile()};
    const auto rob_plan = cli::query_plan(ck, {0.9, 0.05, 0.05}, true);
    const auto util_plan = cli::query_plan(ck, {0.05, 0.9, 0.05}, true);
    const auto o_rob = env.evaluate(rob_plan, cfg.budget);
    const auto o_util = env.evaluate(util_plan, cfg.budget);
    BanditRun b;
    b.rob_gap = o_rob.j_rob - o_util.j_rob;
    b.util_gap = o_util.j_util - o_rob.j_util;
    b.ordered = b.rob_gap > 0.0 && b.util_gap > 0.0;
    const std::size_t tenth = r.log.size() / 10;
    for (std::size_t i = 0; i < tenth; ++i) {
      b.first += r.log[i].mean_raw_reward / static_cast<double>(tenth);
      b.last += r.log[r.log.size() - tenth + i].mean_raw_reward / static_cast<double>(tenth);
    }
    b.progressed = b.last > b.first;
    out.push_back(b);
  }
  secs = seconds_since(t0);
  return out;
}

Outcome criterion7(const std::vector<BanditRun>& runs, double secs) {
  int ok = 0;
  std::ostringstream os;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    ok += runs[i].ordered;
    os << fmt(" seed%zu(drob %+.3f, dutil %+.3f)", i, runs[i].rob_gap, runs[i].util_gap);
  }
  return {ok >= 4 && secs < 300.0,
          fmt("%d/5 seeds ordered (need 4), 1000 episodes each, %.1fs total;", ok, secs) + os.str()};
}

Outcome criterion8(const std::vector<BanditRun>& runs) {
  int ok = 0;
  std::ostringstream os;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    ok += runs[i].progressed;
    os << fmt(" seed%zu(%.4f -> %.4f)", i, runs[i].first, runs[i].last);
  }
  return {ok >= 4, fmt("%d/5 seeds with last-10%% mean reward above first-10%% (need 4);", ok) + os.str()};
}

// ---- 9. recovery integrity --------------------------------------------------

Outcome criterion9() {
  int ok = 0;
  bool checksums = true, isolated = true;
  std::ostringstream os;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    toyvlm::ToyVlmConfig mc;
    mc.seed = seed;
    const auto model = toyvlm::init_model(mc);
    const auto prof = calib::calibrate(model, calib::make_calibration_batch(mc, seed));
    std::vector<double> act;
    for (const auto& l : prof.layers) act.push_back(l.act_rms);
    std::mt19937_64 rng(derive_seed(909, {seed}));
    const auto p = policy::sample_dirichlet(std::vector<double>(mc.n_blocks, 4.0), rng);
    const auto plan = policy::map_plan(std::uniform_real_distribution<double>(0, 1)(rng), p, {}, prof.widths);
    const auto masks = pruner::build_masks(pruner::score_rows(model, act), plan);
    recovery::RecoveryConfig cfg;
    cfg.steps = 500;
    const auto r = recovery::recover(model, masks, cfg, rewards::make_split(mc, seed, rewards::Split::train, 1024),
                                     rewards::make_split(mc, seed, rewards::Split::heldout, 64), seed);
    checksums &= r.report.mask_checksum_before == masks.checksum() &&
                 r.report.mask_checksum_after == r.report.mask_checksum_before;
    std::vector<const Tensor2*> before;
    model.for_each([&](const std::string&, const Tensor2& t) { before.push_back(&t); });
    std::size_t i = 0;
    r.params.for_each([&](const std::string& name, const Tensor2& t) {
      if (!cfg.scope.contains(name, mc.n_blocks) && !(t == *before[i])) isolated = false;
      ++i;
    });
    // Masked neurons contribute nothing: overlay forward equals the physically pruned model.
    const auto dense = pruner::materialize(r.params, masks);
    const auto t = random_tokens(rng, mc);
    const auto a = toyvlm::forward(r.params, masks, t).logits;
    const auto b = toyvlm::forward(dense, toyvlm::MaskSet{}, t).logits;
    for (std::size_t k = 0; k < a.size(); ++k) isolated &= std::abs(a[k] - b[k]) <= 1e-12;
    const bool up = r.report.post.mean_margin() >= r.report.pre.mean_margin();
    ok += up;
    os << fmt(" seed%zu(%.3f -> %.3f)", seed, r.report.pre.mean_margin(), r.report.post.mean_margin());
  }
  return {checksums && isolated && ok >= 4,
          fmt("mask checksums unchanged: %s; out-of-scope parameters bit-identical and masked neurons inert: %s; "
              "%d/5 seeds with held-out mean log-margin non-decreasing after 500 steps (need 4);",
              checksums ? "yes" : "no", isolated ? "yes" : "no", ok) +
              os.str()};
}

// ---- 10. Pareto export and pipeline determinism -----------------------------

Outcome criterion10() {
  std::mt19937_64 rng(1010);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> coarse(0, 6);
  std::uniform_real_distribution<double> sp(0.15, 0.55);
  std::size_t mismatches = 0;
  const int clouds = 1000;
  for (int c = 0; c < clouds; ++c) {
    std::vector<cli::ParetoPoint> pts(50);
    for (auto& p : pts) {
      p.j_rob = c % 2 ? coarse(rng) : n(rng);
      p.j_util = c % 2 ? coarse(rng) : n(rng);
      p.sparsity = sp(rng);
    }
    cli::flag_dominated(pts, 0.2, 0.5);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const bool in_i = pts[i].sparsity >= 0.2 && pts[i].sparsity <= 0.5;
      bool dom = !in_i;
      for (std::size_t j = 0; j < pts.size() && in_i && !dom; ++j) {
        if (i == j || pts[j].sparsity < 0.2 || pts[j].sparsity > 0.5) continue;
        dom = pts[j].j_rob >= pts[i].j_rob && pts[j].j_util >= pts[i].j_util &&
              (pts[j].j_rob > pts[i].j_rob || pts[j].j_util > pts[i].j_util);
      }
      mismatches += dom != pts[i].dominated;
    }
  }

  const fs::path root = fs::temp_directory_path() / ("planforge_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  std::string manifests[2];
  double secs = 0.0;
  for (int run = 0; run < 2; ++run) {
    cli::RunConfig cfg;
    cfg.trainer.episodes = 5;
    cfg.trainer.threads = run == 0 ? 1 : 4;
    cfg.recovery.steps = 5;
    cfg.recovery_train_probes = 64;
    cfg.probes_per_task = 16;
    cfg.seed = 10;
    cfg.out = root / ("run" + std::to_string(run));
    const auto t0 = Clock::now();
    std::ostringstream log;
    manifests[run] = cli::cmd_pipeline(cfg, "calibrate", log).dump();
    secs = std::max(secs, seconds_since(t0));
  }
  fs::remove_all(root);
  const bool same = manifests[0] == manifests[1];
  return {mismatches == 0 && same,
          fmt("%zu flag mismatches vs O(n^2) oracle over %d 50-point clouds; smoke pipeline manifests identical "
              "across reruns (1 vs 4 threads): %s, slowest run %.1fs",
              mismatches, clouds, same ? "yes" : "no", secs)};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const Outcome& o) {
    std::printf("%s criterion %d: %s\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };
  auto guarded = [&](int id, const std::function<Outcome()>& fn) {
    try {
      report(id, fn());
    } catch (const std::exception& e) {
      report(id, {false, std::string("exception: ") + e.what()});
    }
  };
  guarded(1, criterion1);
  guarded(2, criterion2);
  guarded(3, criterion3);
  guarded(4, criterion4);
  guarded(5, criterion5);
  guarded(6, criterion6);
  double bandit_secs = 0.0;
  std::vector<BanditRun> runs;
  try {
    runs = bandit_runs(bandit_secs);
  } catch (const std::exception& e) {
    report(7, {false, std::string("exception: ") + e.what()});
    report(8, {false, std::string("exception: ") + e.what()});
  }
  if (!runs.empty()) {
    report(7, criterion7(runs, bandit_secs));
    report(8, criterion8(runs));
  }
  guarded(9, criterion9);
  guarded(10, criterion10);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
