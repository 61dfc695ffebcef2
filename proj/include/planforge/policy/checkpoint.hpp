#pragma once

// A policy checkpoint is a named-array file (`<name>.bin`) plus a JSON sidecar
// (`<name>.json`) holding the feature layout version, the plan mapper and the
// calibration profile the policy was trained against.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "planforge/calib/calibration.hpp"
#include "planforge/policy/network.hpp"
#include "planforge/policy/plan.hpp"
#include "planforge/toyvlm/checkpoint.hpp"

namespace planforge::policy {

struct PolicyCheckpoint {
  PolicyParams params;
  PlanMapperConfig mapper;
  calib::CalibrationProfile profile;
  int feature_layout_version = calib::kFeatureLayoutVersion;

  bool operator==(const PolicyCheckpoint&) const = default;
};

inline std::filesystem::path sidecar_path(const std::filesystem::path& bin) {
  auto p = bin;
  p.replace_extension(".json");
  return p;
}

inline nlohmann::ordered_json sidecar_json(const PolicyCheckpoint& c) {
  nlohmann::ordered_json j;
  j["kind"] = "plan-policy";
  j["feature_layout_version"] = c.feature_layout_version;
  j["feature_dim"] = calib::kFeatureDim;
  j["hidden"] = c.params.config.hidden;
  j["seed"] = c.params.config.seed;
  j["mapper"] = {{"c_min", c.mapper.c_min}, {"c_max", c.mapper.c_max}, {"kappa", c.mapper.kappa}};
  j["calibration"] = calib::profile_to_json(c.profile);
  return j;
}

inline void save_policy(const std::filesystem::path& bin, const PolicyCheckpoint& c) {
  toyvlm::ArrayBundle b;
  b.meta["kind"] = "plan-policy";
  b.meta["feature_layout_version"] = c.feature_layout_version;
  c.params.for_each([&](const std::string& name, const Tensor2& t) { b.arrays.push_back({name, t}); });
  toyvlm::save_bundle(bin, b);
  toyvlm::write_file_bytes(sidecar_path(bin), sidecar_json(c).dump(2) + "\n");
}

inline PolicyCheckpoint load_policy(const std::filesystem::path& bin) {
  const auto b = toyvlm::load_bundle(bin);
  if (b.meta.value("kind", "") != "plan-policy") throw LoadError(bin.string() + " is not a policy checkpoint");
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(toyvlm::read_file_bytes(sidecar_path(bin)));
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError(std::string("policy sidecar: ") + e.what());
  }
  PolicyCheckpoint c;
  try {
    const int v_bin = b.meta.at("feature_layout_version").get<int>();
    const int v_side = side.at("feature_layout_version").get<int>();
    if (v_bin != calib::kFeatureLayoutVersion || v_side != calib::kFeatureLayoutVersion) {
      throw LoadError("policy feature layout version " + std::to_string(v_side) + " does not match expected " +
                      std::to_string(calib::kFeatureLayoutVersion));
    }
    c.feature_layout_version = v_side;
    c.params.config.hidden = side.at("hidden").get<std::size_t>();
    c.params.config.seed = side.at("seed").get<std::uint64_t>();
    const auto& m = side.at("mapper");
    c.mapper = {m.at("c_min").get<double>(), m.at("c_max").get<double>(), m.at("kappa").get<double>()};
    c.profile = calib::profile_from_json(side.at("calibration"));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("policy sidecar: ") + e.what());
  }
  c.params.for_each_mut([&](const std::string& name, Tensor2& t) { t = b.at(name); });
  if (c.params.w1.cols() != calib::kFeatureDim || c.params.w1.rows() != c.params.config.hidden) {
    throw LoadError("policy weights do not match the declared layout");
  }
  return c;
}

}  // namespace planforge::policy
