#pragma once

#include <memory>
#include <vector>

#include "planforge/calib/calibration.hpp"
#include "planforge/policy/plan.hpp"
#include "planforge/pruner/pruner.hpp"
#include "planforge/rewards/objectives.hpp"
#include "planforge/rewards/stability.hpp"

namespace planforge::grpo {

/// Everything the trainer needs from the thing being pruned. evaluate() and
/// flow() must be safe to call concurrently.
class PlanEnvironment {
 public:
  virtual ~PlanEnvironment() = default;
  virtual const calib::CalibrationProfile& profile() const = 0;
  virtual rewards::ObjectiveVector evaluate(const policy::PruningPlan& plan, const Budget& budget) const = 0;
  virtual double flow(const policy::PruningPlan& plan) const = 0;
  virtual double reference_flow() const = 0;

  std::size_t num_layers() const { return profile().size(); }
  const std::vector<std::size_t>& layer_widths() const { return profile().widths; }
  std::vector<calib::LayerState> states(const Budget& b, const Preference& w) const {
    return calib::states_from_profile(profile(), b, w);
  }
};

/// Prunes the toy VLM: plans become masks over the Wanda score table and are
/// scored on the reward probe split.
class ToyVlmEnvironment final : public PlanEnvironment {
 public:
  ToyVlmEnvironment(toyvlm::ToyVlmParams params, calib::CalibrationProfile profile, rewards::ProbeSet probes)
      : params_(std::move(params)), profile_(std::move(profile)), probes_(std::move(probes)) {
    if (profile_.size() != params_.blocks.size()) throw UsageError("calibration profile does not match the model");
    std::vector<double> rms;
    for (const auto& l : profile_.layers) rms.push_back(l.act_rms);
    scores_ = pruner::score_rows(params_, rms);
    flow_ref_ = rewards::synflow_score(params_, toyvlm::MaskSet{});
  }

  const calib::CalibrationProfile& profile() const override { return profile_; }

  toyvlm::MaskSet masks(const policy::PruningPlan& plan) const { return pruner::build_masks(scores_, plan); }

  rewards::ObjectiveVector evaluate(const policy::PruningPlan& plan, const Budget& budget) const override {
    const auto m = masks(plan);
    return rewards::eval_objectives(params_, m, probes_, pruner::mask_sparsity(m), budget);
  }

  double flow(const policy::PruningPlan& plan) const override { return rewards::synflow_score(params_, masks(plan)); }
  double reference_flow() const override { return flow_ref_; }

  const toyvlm::ToyVlmParams& params() const noexcept { return params_; }
  const pruner::RowScoreTable& scores() const noexcept { return scores_; }
  const rewards::ProbeSet& probes() const noexcept { return probes_; }

 private:
  toyvlm::ToyVlmParams params_;
  calib::CalibrationProfile profile_;
  rewards::ProbeSet probes_;
  pruner::RowScoreTable scores_;
  double flow_ref_ = 0.0;
};

}  // namespace planforge::grpo
