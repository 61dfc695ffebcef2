#pragma once

// Run configuration loaded from an INI-style file:
//
//   [trainer]
//   episodes = 200   ; comments start with ';' or '#'
//
// Unknown sections or keys are rejected. Relative paths resolve against the
// directory of the config file.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "json.hpp"
#include "planforge/core/rng.hpp"
#include "planforge/error.hpp"
#include "planforge/grpo/trainer.hpp"
#include "planforge/recovery/recovery.hpp"
#include "planforge/toyvlm/checkpoint.hpp"
#include "planforge/toyvlm/model.hpp"

namespace planforge::cli {

using IniDocument = std::map<std::string, std::map<std::string, std::string>>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline IniDocument parse_ini(const std::string& text) {
  IniDocument doc;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto cut = line.find_first_of(";#");
    line = detail::trim(cut == std::string::npos ? line : line.substr(0, cut));
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + "empty section name");
      doc[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside of a section");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (doc[section].count(key)) throw ConfigError(where + "duplicate key " + key);
    doc[section][key] = detail::trim(line.substr(eq + 1));
  }
  return doc;
}

struct RunConfig {
  toyvlm::ToyVlmConfig model;
  grpo::TrainerConfig trainer;
  std::size_t policy_hidden = 32;
  recovery::RecoveryConfig recovery;
  std::size_t recovery_train_probes = 1024;
  std::uint64_t seed = 0;
  std::size_t calibration_examples = 16;
  std::size_t probes_per_task = 64;
  double sweep_step = 0.1;
  std::size_t sweep_samples = 1;
  std::filesystem::path out = "run";

  void validate() const {
    model.validate();
    trainer.validate();
    recovery.validate();
    if (policy_hidden == 0) throw ConfigError("policy hidden width must be positive");
    if (calibration_examples == 0 || probes_per_task == 0 || recovery_train_probes == 0) {
      throw ConfigError("calibration and probe counts must be positive");
    }
    if (sweep_samples == 0) throw ConfigError("sweep samples must be positive");
  }
};

/// Independent seeds for each consumer, all derived from the run seed.
struct RunSeeds {
  std::uint64_t model, calibration, probes, trainer, policy, recovery, query;

  static RunSeeds from(std::uint64_t seed) {
    return {derive_seed(seed, {1}), derive_seed(seed, {2}), derive_seed(seed, {3}), derive_seed(seed, {4}),
            derive_seed(seed, {5}), derive_seed(seed, {6}), derive_seed(seed, {7})};
  }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: bad value '" + v + "' for " + key);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: bad boolean '" + v + "' for " + key);
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value,
                                  const std::filesystem::path& base)>;

template <class T>
Setter num(T RunConfig::*field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v, const std::filesystem::path&) {
    c.*field = parse_number<T>(k, v);
  };
}

template <class Sub, class T>
Setter num(Sub RunConfig::*sub, T Sub::*field) {
  return [sub, field](RunConfig& c, const std::string& k, const std::string& v, const std::filesystem::path&) {
    (c.*sub).*field = parse_number<T>(k, v);
  };
}

template <class F>
Setter custom(F f) {
  return [f](RunConfig& c, const std::string& k, const std::string& v, const std::filesystem::path& base) {
    f(c, k, v, base);
  };
}

inline const std::map<std::string, Setter>& setters() {
  using grpo::TrainerConfig;
  using recovery::RecoveryConfig;
  using toyvlm::ToyVlmConfig;
  static const std::map<std::string, Setter> table = {
      {"model.d_model", num(&RunConfig::model, &ToyVlmConfig::d_model)},
      {"model.n_heads", num(&RunConfig::model, &ToyVlmConfig::n_heads)},
      {"model.n_blocks", num(&RunConfig::model, &ToyVlmConfig::n_blocks)},
      {"model.d_ff", num(&RunConfig::model, &ToyVlmConfig::d_ff)},
      {"model.vocab_size", num(&RunConfig::model, &ToyVlmConfig::vocab_size)},
      {"model.n_vision_tokens", num(&RunConfig::model, &ToyVlmConfig::n_vision_tokens)},
      {"model.max_seq", num(&RunConfig::model, &ToyVlmConfig::max_seq)},

      {"budget.c_min", custom([](RunConfig& c, auto& k, auto& v, auto&) { c.trainer.budget.c_min = parse_number<double>(k, v); })},
      {"budget.c_max", custom([](RunConfig& c, auto& k, auto& v, auto&) { c.trainer.budget.c_max = parse_number<double>(k, v); })},
      {"budget.kappa", num(&RunConfig::trainer, &TrainerConfig::kappa)},

      {"trainer.group_size", num(&RunConfig::trainer, &TrainerConfig::group_size)},
      {"trainer.episodes", num(&RunConfig::trainer, &TrainerConfig::episodes)},
      {"trainer.learning_rate", num(&RunConfig::trainer, &TrainerConfig::learning_rate)},
      {"trainer.entropy_coefficient", num(&RunConfig::trainer, &TrainerConfig::entropy_coefficient)},
      {"trainer.grad_clip", num(&RunConfig::trainer, &TrainerConfig::grad_clip)},
      {"trainer.threads", num(&RunConfig::trainer, &TrainerConfig::threads)},
      {"trainer.normalizer_momentum", num(&RunConfig::trainer, &TrainerConfig::normalizer_momentum)},
      {"trainer.hidden", num(&RunConfig::policy_hidden)},
      {"trainer.lambda_syn", custom([](RunConfig& c, auto& k, auto& v, auto&) { c.trainer.gate.lambda_syn = parse_number<double>(k, v); })},
      {"trainer.beta_syn", custom([](RunConfig& c, auto& k, auto& v, auto&) { c.trainer.gate.beta_syn = parse_number<double>(k, v); })},
      {"trainer.gamma_min", custom([](RunConfig& c, auto& k, auto& v, auto&) { c.trainer.gate.gamma_min = parse_number<double>(k, v); })},
      {"trainer.warmup_episodes", custom([](RunConfig& c, auto& k, auto& v, auto&) { c.trainer.gate.warmup_episodes = parse_number<std::size_t>(k, v); })},
      {"trainer.anchor_probability", custom([](RunConfig& c, auto& k, auto& v, auto&) { c.trainer.sampler.anchor_probability = parse_number<double>(k, v); })},

      {"recovery.steps", num(&RunConfig::recovery, &RecoveryConfig::steps)},
      {"recovery.learning_rate", num(&RunConfig::recovery, &RecoveryConfig::learning_rate)},
      {"recovery.batch_size", num(&RunConfig::recovery, &RecoveryConfig::batch_size)},
      {"recovery.grad_clip", num(&RunConfig::recovery, &RecoveryConfig::grad_clip)},
      {"recovery.lambda_balance", num(&RunConfig::recovery, &RecoveryConfig::lambda_balance)},
      {"recovery.lambda_margin", num(&RunConfig::recovery, &RecoveryConfig::lambda_margin)},
      {"recovery.lambda_yes", num(&RunConfig::recovery, &RecoveryConfig::lambda_yes)},
      {"recovery.margin_target", num(&RunConfig::recovery, &RecoveryConfig::margin_target)},
      {"recovery.yes_rate_target", num(&RunConfig::recovery, &RecoveryConfig::yes_rate_target)},
      {"recovery.mixture", num(&RunConfig::recovery, &RecoveryConfig::mixture)},
      {"recovery.scope", custom([](RunConfig& c, auto&, auto& v, auto&) { c.recovery.scope = recovery::parse_scope(v); })},
      {"recovery.train_probes", num(&RunConfig::recovery_train_probes)},

      {"run.seed", num(&RunConfig::seed)},
      {"run.calibration_examples", num(&RunConfig::calibration_examples)},
      {"run.probes_per_task", num(&RunConfig::probes_per_task)},
      {"run.sweep_step", num(&RunConfig::sweep_step)},
      {"run.sweep_samples", num(&RunConfig::sweep_samples)},

      {"paths.out", custom([](RunConfig& c, auto&, auto& v, auto& base) {
         const std::filesystem::path p(v);
         c.out = p.is_absolute() ? p : base / p;
         const auto parent = c.out.parent_path();
         if (!parent.empty() && !std::filesystem::is_directory(parent)) {
           throw ConfigError("config: parent directory of out path does not exist: " + parent.string());
         }
       })},
  };
  return table;
}

}  // namespace detail

inline RunConfig config_from_ini(const IniDocument& doc, const std::filesystem::path& base = ".") {
  RunConfig c;
  const auto& table = detail::setters();
  for (const auto& [section, kv] : doc) {
    for (const auto& [key, value] : kv) {
      const auto it = table.find(section + "." + key);
      if (it == table.end()) throw ConfigError("config: unknown key [" + section + "] " + key);
      it->second(c, "[" + section + "] " + key, value, base);
    }
    bool known_section = false;
    for (const auto& [name, setter] : table) known_section |= name.rfind(section + ".", 0) == 0;
    if (!known_section) throw ConfigError("config: unknown section [" + section + "]");
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = toyvlm::read_file_bytes(path);
  } catch (const LoadError&) {
    throw ConfigError("config file not found: " + path.string());
  }
  return config_from_ini(parse_ini(text), path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

inline constexpr const char* kSeedEnv = "PLANFORGE_SEED";

/// Precedence: explicit flag, then $PLANFORGE_SEED, then the config value.
inline std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_seed) {
  if (flag) return *flag;
  if (const char* env = std::getenv(kSeedEnv); env && *env) {
    return detail::parse_number<std::uint64_t>(kSeedEnv, env);
  }
  return config_seed;
}

inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["model"] = toyvlm::config_to_json(c.model);
  j["model"].erase("seed");
  j["budget"] = {{"c_min", c.trainer.budget.c_min}, {"c_max", c.trainer.budget.c_max}, {"kappa", c.trainer.kappa}};
  const auto& t = c.trainer;
  j["trainer"] = {{"group_size", t.group_size},
                  {"episodes", t.episodes},
                  {"learning_rate", t.learning_rate},
                  {"entropy_coefficient", t.entropy_coefficient},
                  {"grad_clip", t.grad_clip},
                  {"normalizer_momentum", t.normalizer_momentum},
                  {"hidden", c.policy_hidden},
                  {"lambda_syn", t.gate.lambda_syn},
                  {"beta_syn", t.gate.beta_syn},
                  {"gamma_min", t.gate.gamma_min},
                  {"warmup_episodes", t.gate.warmup_episodes},
                  {"anchor_probability", t.sampler.anchor_probability}};
  const auto& r = c.recovery;
  j["recovery"] = {{"steps", r.steps},
                   {"learning_rate", r.learning_rate},
                   {"batch_size", r.batch_size},
                   {"grad_clip", r.grad_clip},
                   {"scope", recovery::scope_to_string(r.scope)},
                   {"lambda_balance", r.lambda_balance},
                   {"lambda_margin", r.lambda_margin},
                   {"lambda_yes", r.lambda_yes},
                   {"margin_target", r.margin_target},
                   {"yes_rate_target", r.yes_rate_target},
                   {"mixture", r.mixture},
                   {"train_probes", c.recovery_train_probes}};
  j["run"] = {{"seed", c.seed},
              {"calibration_examples", c.calibration_examples},
              {"probes_per_task", c.probes_per_task},
              {"sweep_step", c.sweep_step},
              {"sweep_samples", c.sweep_samples}};
  return j;
}

}  // namespace planforge::cli
