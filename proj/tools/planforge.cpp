#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "planforge/cli/commands.hpp"

namespace pc = planforge::cli;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c, bool out_required = false) {
  app->add_option("--config", c.config, "INI run configuration")->check(CLI::ExistingFile);
  auto* o = app->add_option("--out", c.out, "output directory");
  if (out_required) o->required();
  app->add_option("--seed", c.seed, "run seed (overrides $PLANFORGE_SEED and the config)");
}

pc::RunConfig resolve(const Common& c) {
  pc::RunConfig cfg = c.config.empty() ? pc::RunConfig{} : pc::load_config(c.config);
  cfg.seed = pc::resolve_seed(c.seed, cfg.seed);
  if (!c.out.empty()) cfg.out = c.out;
  cfg.validate();
  return cfg;
}

planforge::Preference parse_w(const std::vector<double>& v) {
  if (v.size() != 3) throw planforge::InputError("--w expects three values rob,util,comp");
  return {v[0], v[1], v[2]};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"planforge: preference-conditioned structured pruning plans for a toy vision-language model"};
  app.require_subcommand(1);

  Common c_cal, c_train, c_query, c_sweep, c_apply, c_rec, c_eval, c_pipe;

  auto* cal = app.add_subcommand("calibrate", "initialise the toy model and write calibration statistics");
  add_common(cal, c_cal);

  auto* train = app.add_subcommand("train", "train the plan policy with group-relative policy optimisation");
  add_common(train, c_train);
  std::optional<std::size_t> episodes, threads;
  train->add_option("--episodes", episodes, "override trainer episodes");
  train->add_option("--threads", threads, "rollout worker threads");

  auto* query = app.add_subcommand("query", "emit a pruning plan for a preference vector");
  add_common(query, c_query);
  std::string policy_path;
  std::vector<double> w;
  bool sample = false;
  query->add_option("--policy", policy_path, "policy checkpoint (.bin)")->required();
  query->add_option("--w", w, "preference rob,util,comp")->delimiter(',')->required()->expected(3);
  query->add_flag("--sample", sample, "sample the action instead of using distribution means");

  auto* sweep = app.add_subcommand("sweep", "evaluate a preference grid and export the Pareto cloud");
  add_common(sweep, c_sweep);
  std::string sweep_policy, sweep_model;
  std::optional<double> grid;
  std::optional<std::size_t> samples, sweep_threads;
  sweep->add_option("--policy", sweep_policy, "policy checkpoint (.bin)")->required();
  sweep->add_option("--model", sweep_model, "model checkpoint (.bin)")->required();
  sweep->add_option("--grid", grid, "simplex lattice spacing");
  sweep->add_option("--samples", samples, "plans per preference (1 = deterministic)");
  sweep->add_option("--threads", sweep_threads, "evaluation threads");

  auto* apply = app.add_subcommand("apply", "turn a plan into masks and a pruned checkpoint");
  add_common(apply, c_apply);
  std::string apply_model, apply_cal, apply_plan;
  apply->add_option("--model", apply_model, "model checkpoint (.bin)")->required();
  apply->add_option("--calibration", apply_cal, "calibration.json")->required();
  apply->add_option("--plan", apply_plan, "plan.json")->required();

  auto* rec = app.add_subcommand("recover", "mask-fixed recovery fine-tuning");
  add_common(rec, c_rec);
  std::string rec_model, rec_masks, scope;
  std::optional<std::size_t> steps;
  std::optional<double> lr, mixture;
  rec->add_option("--model", rec_model, "model checkpoint (.bin)")->required();
  rec->add_option("--masks", rec_masks, "masks.json")->required();
  rec->add_option("--steps", steps, "gradient steps");
  rec->add_option("--lr", lr, "learning rate");
  rec->add_option("--scope", scope, "trainable scope, e.g. lm_head,final_norm,blocks:1");
  rec->add_option("--mixture", mixture, "fraction of robustness probes per batch");

  auto* eval = app.add_subcommand("eval", "score a model on held-out probes");
  add_common(eval, c_eval);
  std::string eval_model, eval_masks;
  eval->add_option("--model", eval_model, "model checkpoint (.bin)")->required();
  eval->add_option("--masks", eval_masks, "optional masks.json overlay");

  auto* pipe = app.add_subcommand("pipeline", "calibrate, train, query anchors, apply, recover, evaluate");
  add_common(pipe, c_pipe);
  std::string from = "calibrate";
  pipe->add_option("--from", from, "first stage to run")
      ->check(CLI::IsMember({"calibrate", "train", "query", "apply", "recover", "eval"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cal) {
      const auto cfg = resolve(c_cal);
      pc::cmd_calibrate(cfg, cfg.out);
      std::cout << "calibration written to " << cfg.out.string() << "\n";
    } else if (*train) {
      auto cfg = resolve(c_train);
      if (episodes) cfg.trainer.episodes = *episodes;
      if (threads) cfg.trainer.threads = *threads;
      const auto s = pc::cmd_train(cfg, cfg.out);
      std::cout << "trained " << s.episodes << " episodes; best episode " << s.best_episode << "\n";
    } else if (*query) {
      const auto cfg = resolve(c_query);
      const auto plan = pc::cmd_query(policy_path, parse_w(w), !sample, pc::RunSeeds::from(cfg.seed).query,
                                      cfg.out / pc::kPlanFile);
      std::cout << planforge::policy::plan_to_string(plan);
    } else if (*sweep) {
      const auto cfg = resolve(c_sweep);
      pc::SweepOptions o;
      o.step = grid.value_or(cfg.sweep_step);
      o.samples_per_w = samples.value_or(cfg.sweep_samples);
      o.per_task = cfg.probes_per_task;
      o.seed = cfg.seed;
      o.threads = sweep_threads.value_or(cfg.trainer.threads);
      const auto pts = pc::cmd_sweep(sweep_policy, sweep_model, o, cfg.out);
      std::size_t front = 0;
      for (const auto& p : pts) front += !p.dominated;
      std::cout << pts.size() << " points, " << front << " non-dominated\n";
    } else if (*apply) {
      const auto cfg = resolve(c_apply);
      const auto m = pc::cmd_apply(apply_model, apply_cal, apply_plan, cfg.out);
      std::cout << "mask sparsity " << planforge::pruner::mask_sparsity(m) << "\n";
    } else if (*rec) {
      auto cfg = resolve(c_rec);
      if (steps) cfg.recovery.steps = *steps;
      if (lr) cfg.recovery.learning_rate = *lr;
      if (mixture) cfg.recovery.mixture = *mixture;
      if (!scope.empty()) cfg.recovery.scope = planforge::recovery::parse_scope(scope);
      pc::RecoverOptions o{cfg.recovery, cfg.recovery_train_probes, cfg.probes_per_task, cfg.seed};
      const auto r = pc::cmd_recover(rec_model, rec_masks, o, cfg.out);
      std::cout << planforge::recovery::report_to_json(r)["post"].dump() << "\n";
    } else if (*eval) {
      const auto cfg = resolve(c_eval);
      std::optional<fs::path> masks;
      if (!eval_masks.empty()) masks = eval_masks;
      const auto r = pc::cmd_eval(eval_model, masks, cfg.trainer.budget, cfg.probes_per_task, cfg.seed, cfg.out);
      std::cout << pc::eval_to_json(r).dump() << "\n";
    } else if (*pipe) {
      const auto cfg = resolve(c_pipe);
      pc::cmd_pipeline(cfg, from, std::cerr);
      std::cout << "pipeline complete: " << (cfg.out / pc::kManifestFile).string() << "\n";
    }
  } catch (const planforge::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
