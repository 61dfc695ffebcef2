#pragma once

#include <array>
#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "planforge/calib/calibration.hpp"
#include "planforge/cli/config.hpp"
#include "planforge/cli/manifest.hpp"
#include "planforge/cli/pareto.hpp"
#include "planforge/error.hpp"
#include "planforge/grpo/environment.hpp"
#include "planforge/grpo/sampler.hpp"
#include "planforge/grpo/trainer.hpp"
#include "planforge/policy/checkpoint.hpp"
#include "planforge/policy/plan.hpp"
#include "planforge/pruner/pruner.hpp"
#include "planforge/recovery/recovery.hpp"
#include "planforge/rewards/probes.hpp"
#include "planforge/toyvlm/checkpoint.hpp"

namespace planforge::cli {

namespace fs = std::filesystem;

inline constexpr const char* kModelFile = "model.bin";
inline constexpr const char* kCalibrationFile = "calibration.json";
inline constexpr const char* kPolicyFile = "policy.bin";
inline constexpr const char* kBestPolicyFile = "best_policy.bin";
inline constexpr const char* kTrainLogFile = "train_log.jsonl";
inline constexpr const char* kPlanFile = "plan.json";
inline constexpr const char* kMasksFile = "masks.json";
inline constexpr const char* kPrunedModelFile = "pruned_model.bin";
inline constexpr const char* kRecoveredModelFile = "recovered_model.bin";
inline constexpr const char* kRecoveryReportFile = "recovery_report.json";
inline constexpr const char* kEvalFile = "eval.json";
inline constexpr const char* kParetoCsvFile = "pareto.csv";
inline constexpr const char* kParetoJsonFile = "pareto.json";
inline constexpr const char* kResolvedConfigFile = "config.json";

/// An error tagged with the pipeline stage it came from: "[stage] message".
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& msg)
      : Error("[" + stage + "] " + msg), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

template <class Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

inline void require_file(const std::string& stage, const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw StageError(stage, what + " missing: " + p.string());
}

inline void write_text(const fs::path& p, const std::string& text) { toyvlm::write_file_bytes(p, text); }

inline nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(toyvlm::read_file_bytes(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError(p.string() + ": " + e.what());
  }
}

// ---- calibrate ---------------------------------------------------------------

struct CalibrationArtifact {
  calib::CalibrationProfile profile;
  std::uint64_t fingerprint = 0;
};

inline void save_calibration(const fs::path& p, const CalibrationArtifact& a) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["fingerprint"] = hex64(a.fingerprint);
  j["profile"] = calib::profile_to_json(a.profile);
  write_text(p, j.dump(2) + "\n");
}

inline CalibrationArtifact load_calibration(const fs::path& p) {
  const auto j = read_json(p);
  try {
    if (j.at("version").get<int>() != 1) throw LoadError("unsupported calibration version");
    return {calib::profile_from_json(j.at("profile")),
            std::stoull(j.at("fingerprint").get<std::string>(), nullptr, 16)};
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(p.string() + ": " + e.what());
  }
}

/// Initialises the toy model from the run seed and writes model.bin and calibration.json.
inline calib::CalibrationProfile cmd_calibrate(const RunConfig& cfg, const fs::path& out) {
  return run_stage("calibrate", [&] {
    const auto seeds = RunSeeds::from(cfg.seed);
    auto mc = cfg.model;
    mc.seed = seeds.model;
    const auto model = toyvlm::init_model(mc);
    const auto batch = calib::make_calibration_batch(mc, seeds.calibration, cfg.calibration_examples);
    CalibrationArtifact a{calib::calibrate(model, batch), calib::fingerprint(model, batch)};
    toyvlm::save_model(out / kModelFile, model);
    save_calibration(out / kCalibrationFile, a);
    write_manifest(out);
    return a.profile;
  });
}

// ---- train -------------------------------------------------------------------

struct TrainSummary {
  std::size_t episodes = 0;
  double best_mean_reward = 0.0;
  std::size_t best_episode = 0;
  double first_mean_raw_reward = 0.0;
  double last_mean_raw_reward = 0.0;
};

inline TrainSummary cmd_train(const RunConfig& cfg, const fs::path& out) {
  const std::string stage = "train";
  require_file(stage, out / kModelFile, "model artifact");
  require_file(stage, out / kCalibrationFile, "calibration artifact");
  return run_stage(stage, [&] {
    const auto seeds = RunSeeds::from(cfg.seed);
    auto model = toyvlm::load_model(out / kModelFile);
    auto cal = load_calibration(out / kCalibrationFile);
    const auto mc = model.config;
    grpo::ToyVlmEnvironment env(std::move(model), std::move(cal.profile),
                                rewards::make_split(mc, seeds.probes, rewards::Split::reward, cfg.probes_per_task));
    auto tc = cfg.trainer;
    tc.seed = seeds.trainer;
    std::string log;
    const auto result = grpo::train(env, tc, policy::init_policy({cfg.policy_hidden, seeds.policy}),
                                    [&](const grpo::EpisodeRecord& rec) {
                                      for (const auto& line : grpo::episode_log_lines(rec)) log += line + "\n";
                                    });
    policy::save_policy(out / kPolicyFile, {result.final_policy, tc.mapper(), env.profile()});
    policy::save_policy(out / kBestPolicyFile, {result.best_policy, tc.mapper(), env.profile()});
    write_text(out / kTrainLogFile, log);
    write_text(out / kResolvedConfigFile, config_to_json(cfg).dump(2) + "\n");
    write_manifest(out);
    TrainSummary s;
    s.episodes = result.log.size();
    s.best_mean_reward = result.best_mean_reward;
    s.best_episode = result.best_episode;
    if (!result.log.empty()) {
      s.first_mean_raw_reward = result.log.front().mean_raw_reward;
      s.last_mean_raw_reward = result.log.back().mean_raw_reward;
    }
    return s;
  });
}

// ---- query -------------------------------------------------------------------

/// Returns w on the simplex; writes a warning when it had to renormalise.
inline Preference normalize_preference(const Preference& w, std::ostream& warn) {
  if (w.on_simplex()) return w;
  const auto n = w.normalized();
  warn << "warning: preference (" << w.rob << ", " << w.util << ", " << w.comp << ") does not sum to 1; using ("
       << n.rob << ", " << n.util << ", " << n.comp << ")\n";
  return n;
}

/// Plan for preference w from a policy checkpoint. Deterministic mode uses the
/// distribution means; otherwise the action is sampled from `seed`.
inline policy::PruningPlan query_plan(const policy::PolicyCheckpoint& ckpt, const Preference& w, bool deterministic,
                                      std::uint64_t seed = 0) {
  const auto states = calib::states_from_profile(ckpt.profile, ckpt.mapper.budget(), w);
  const auto heads = policy::policy_forward(ckpt.params, states);
  policy::PolicyAction a;
  if (deterministic) {
    a = policy::mean_action(heads);
  } else {
    std::mt19937_64 rng(seed);
    a = policy::sample_action(heads, rng);
  }
  return policy::map_plan(a.s, a.p, ckpt.mapper, ckpt.profile.widths, w);
}

inline policy::PruningPlan cmd_query(const fs::path& policy_path, const Preference& w, bool deterministic,
                                     std::uint64_t seed, const fs::path& plan_out, std::ostream& warn = std::cerr) {
  const std::string stage = "query";
  require_file(stage, policy_path, "policy checkpoint");
  return run_stage(stage, [&] {
    const auto ckpt = policy::load_policy(policy_path);
    const auto plan = query_plan(ckpt, normalize_preference(w, warn), deterministic, seed);
    write_text(plan_out, policy::plan_to_string(plan));
    if (plan_out.has_parent_path()) write_manifest(plan_out.parent_path());
    return plan;
  });
}

// ---- sweep -------------------------------------------------------------------

struct SweepOptions {
  double step = 0.1;
  std::size_t samples_per_w = 1;
  std::size_t per_task = 64;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  /// Budget filter for dominance; defaults to the policy's [c_min, c_max]
  /// widened by one rounding unit.
  std::optional<std::pair<double, double>> sparsity_window;
};

/// One point per (preference, sample); deterministic means when samples_per_w == 1.
inline std::vector<ParetoPoint> sweep_points(const policy::PolicyCheckpoint& ckpt, const grpo::ToyVlmEnvironment& env,
                                             const SweepOptions& o) {
  const auto grid = preference_grid(o.step);
  const std::size_t per = o.samples_per_w;
  std::vector<ParetoPoint> pts(grid.size() * per);
  grpo::parallel_for(pts.size(), o.threads, [&](std::size_t i) {
    const auto& w = grid[i / per];
    const bool det = per == 1;
    const auto plan = query_plan(ckpt, w, det, derive_seed(o.seed, {i / per, i % per}));
    const auto obj = env.evaluate(plan, ckpt.mapper.budget());
    pts[i] = {w, plan.realized_sparsity, obj.j_rob, obj.j_util, false};
  });
  double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
  if (o.sparsity_window) {
    std::tie(lo, hi) = *o.sparsity_window;
  } else {
    std::size_t min_w = std::numeric_limits<std::size_t>::max();
    for (auto w : ckpt.profile.widths) min_w = std::min(min_w, w);
    const double unit = 1.0 / static_cast<double>(min_w);
    lo = ckpt.mapper.c_min - unit;
    hi = ckpt.mapper.c_max + unit;
  }
  flag_dominated(pts, lo, hi);
  return pts;
}

inline std::vector<ParetoPoint> cmd_sweep(const fs::path& policy_path, const fs::path& model_path,
                                          const SweepOptions& o, const fs::path& out) {
  const std::string stage = "sweep";
  require_file(stage, policy_path, "policy checkpoint");
  require_file(stage, model_path, "model artifact");
  return run_stage(stage, [&] {
    const auto ckpt = policy::load_policy(policy_path);
    auto model = toyvlm::load_model(model_path);
    const auto mc = model.config;
    grpo::ToyVlmEnvironment env(std::move(model), ckpt.profile,
                                rewards::make_split(mc, RunSeeds::from(o.seed).probes, rewards::Split::heldout,
                                                    o.per_task));
    const auto pts = sweep_points(ckpt, env, o);
    write_text(out / kParetoCsvFile, pareto_csv(pts));
    write_text(out / kParetoJsonFile, pareto_json(pts).dump(2) + "\n");
    write_manifest(out);
    return pts;
  });
}

// ---- apply -------------------------------------------------------------------

inline toyvlm::MaskSet cmd_apply(const fs::path& model_path, const fs::path& calibration_path,
                                 const fs::path& plan_path, const fs::path& out) {
  const std::string stage = "apply";
  require_file(stage, model_path, "model artifact");
  require_file(stage, calibration_path, "calibration artifact");
  require_file(stage, plan_path, "plan");
  return run_stage(stage, [&] {
    const auto model = toyvlm::load_model(model_path);
    const auto cal = load_calibration(calibration_path);
    const auto plan = policy::plan_from_string(toyvlm::read_file_bytes(plan_path));
    std::vector<double> act;
    for (const auto& l : cal.profile.layers) act.push_back(l.act_rms);
    const auto masks = pruner::build_masks(pruner::score_rows(model, act), plan);
    write_text(out / kMasksFile, pruner::mask_manifest(masks).dump(2) + "\n");
    toyvlm::save_model(out / kPrunedModelFile, pruner::materialize(model, masks));
    write_manifest(out);
    return masks;
  });
}

inline toyvlm::MaskSet load_masks(const fs::path& p, const toyvlm::ToyVlmParams& model) {
  std::vector<std::size_t> widths;
  for (const auto& b : model.blocks) widths.push_back(b.gate.rows());
  return pruner::masks_from_manifest(read_json(p), widths);
}

// ---- recover -----------------------------------------------------------------

struct RecoverOptions {
  recovery::RecoveryConfig config;
  std::size_t train_probes = 1024;
  std::size_t eval_probes = 64;
  std::uint64_t seed = 0;
};

inline recovery::RecoveryReport cmd_recover(const fs::path& model_path, const fs::path& masks_path,
                                            const RecoverOptions& o, const fs::path& out) {
  const std::string stage = "recover";
  require_file(stage, model_path, "model artifact");
  require_file(stage, masks_path, "mask manifest");
  return run_stage(stage, [&] {
    const auto model = toyvlm::load_model(model_path);
    const auto masks = load_masks(masks_path, model);
    const auto seeds = RunSeeds::from(o.seed);
    const auto r = recovery::recover(model, masks, o.config,
                                     rewards::make_split(model.config, seeds.probes, rewards::Split::train, o.train_probes),
                                     rewards::make_split(model.config, seeds.probes, rewards::Split::heldout, o.eval_probes),
                                     seeds.recovery);
    toyvlm::save_model(out / kRecoveredModelFile, r.params);
    write_text(out / kRecoveryReportFile, recovery::report_to_json(r.report).dump(2) + "\n");
    write_manifest(out);
    return r.report;
  });
}

// ---- eval --------------------------------------------------------------------

struct EvalResult {
  double sparsity = 0.0;
  rewards::ObjectiveVector objectives;
  recovery::TaskMetrics metrics;
};

inline nlohmann::ordered_json eval_to_json(const EvalResult& r) {
  nlohmann::ordered_json j;
  j["sparsity"] = r.sparsity;
  j["j_rob"] = r.objectives.j_rob;
  j["j_util"] = r.objectives.j_util;
  j["j_comp"] = r.objectives.j_comp;
  j["balanced_accuracy_rob"] = r.metrics.balanced_accuracy_rob;
  j["balanced_accuracy_util"] = r.metrics.balanced_accuracy_util;
  return j;
}

/// Scores a model (optionally under a mask overlay) on the held-out probes.
inline EvalResult cmd_eval(const fs::path& model_path, const std::optional<fs::path>& masks_path,
                           const Budget& budget, std::size_t per_task, std::uint64_t seed, const fs::path& out) {
  const std::string stage = "eval";
  require_file(stage, model_path, "model artifact");
  if (masks_path) require_file(stage, *masks_path, "mask manifest");
  return run_stage(stage, [&] {
    const auto model = toyvlm::load_model(model_path);
    const auto masks = masks_path ? load_masks(*masks_path, model) : toyvlm::MaskSet{};
    const auto probes = rewards::make_split(model.config, RunSeeds::from(seed).probes, rewards::Split::heldout, per_task);
    EvalResult r;
    r.sparsity = pruner::mask_sparsity(masks);
    r.objectives = rewards::eval_objectives(model, masks, probes, r.sparsity, budget);
    r.metrics = recovery::evaluate(model, masks, probes);
    write_text(out / kEvalFile, eval_to_json(r).dump(2) + "\n");
    write_manifest(out);
    return r;
  });
}

// ---- pipeline ----------------------------------------------------------------

inline constexpr std::array<const char*, 6> kStages = {"calibrate", "train", "query", "apply", "recover", "eval"};

inline std::size_t stage_index(const std::string& name) {
  for (std::size_t i = 0; i < kStages.size(); ++i)
    if (name == kStages[i]) return i;
  throw UsageError("unknown pipeline stage '" + name + "'");
}

inline fs::path anchor_dir(const fs::path& out, std::size_t i) { return out / "anchors" / ("a" + std::to_string(i)); }

/// calibrate -> train -> query anchors -> apply -> recover -> eval, all under
/// `cfg.out`. Stages before `from` are skipped and their artifacts reused.
inline nlohmann::ordered_json cmd_pipeline(const RunConfig& cfg, const std::string& from = "calibrate",
                                           std::ostream& log = std::cerr) {
  const std::size_t start = stage_index(from);
  const fs::path out = cfg.out;
  fs::create_directories(out);
  const auto anchors = grpo::default_anchors();
  auto runs = [&](const char* s) { return stage_index(s) >= start; };

  if (runs("calibrate")) {
    log << "[calibrate] " << out.string() << "\n";
    cmd_calibrate(cfg, out);
  }
  if (runs("train")) {
    log << "[train] " << cfg.trainer.episodes << " episodes\n";
    cmd_train(cfg, out);
  }
  if (runs("query")) {
    for (std::size_t i = 0; i < anchors.size(); ++i)
      cmd_query(out / kBestPolicyFile, anchors[i], true, 0, anchor_dir(out, i) / kPlanFile, log);
    log << "[query] " << anchors.size() << " anchor plans\n";
  }
  if (runs("apply")) {
    for (std::size_t i = 0; i < anchors.size(); ++i)
      cmd_apply(out / kModelFile, out / kCalibrationFile, anchor_dir(out, i) / kPlanFile, anchor_dir(out, i));
    log << "[apply] masks written\n";
  }
  if (runs("recover")) {
    RecoverOptions ro{cfg.recovery, cfg.recovery_train_probes, cfg.probes_per_task, cfg.seed};
    for (std::size_t i = 0; i < anchors.size(); ++i)
      cmd_recover(out / kModelFile, anchor_dir(out, i) / kMasksFile, ro, anchor_dir(out, i));
    log << "[recover] " << cfg.recovery.steps << " steps per plan\n";
  }
  if (runs("eval")) {
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      const auto dir = anchor_dir(out, i);
      cmd_eval(dir / kRecoveredModelFile, dir / kMasksFile, cfg.trainer.budget, cfg.probes_per_task, cfg.seed, dir);
    }
    log << "[eval] done\n";
  }
  write_text(out / kResolvedConfigFile, config_to_json(cfg).dump(2) + "\n");
  write_manifest(out);
  return build_manifest(out);
}

}  // namespace planforge::cli
