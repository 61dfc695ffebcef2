#pragma once

// Synthetic yes/no and multiple-choice probes.
//   robustness: [vision objects..., QUERY, q, ANSWER] -> YES iff q is among the vision tokens
//   utility:    [vision objects..., QUESTION, a, b, ANSWER] -> choice (a + b) mod 4

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "planforge/error.hpp"
#include "planforge/toyvlm/model.hpp"
#include "planforge/toyvlm/vocab.hpp"

namespace planforge::rewards {

enum class TaskTag { robustness, utility };

inline std::string to_string(TaskTag t) { return t == TaskTag::robustness ? "robustness" : "utility"; }

struct ProbeInstance {
  std::vector<std::size_t> tokens;
  std::size_t answer_position = 0;
  std::vector<std::size_t> gt_tokens;
  std::vector<std::size_t> neg_tokens;
  TaskTag task = TaskTag::robustness;

  void validate() const {
    if (gt_tokens.empty() || neg_tokens.empty()) throw InputError("probe answer sets must be non-empty");
    for (auto g : gt_tokens)
      if (std::find(neg_tokens.begin(), neg_tokens.end(), g) != neg_tokens.end())
        throw InputError("probe answer sets must be disjoint");
    if (answer_position >= tokens.size()) throw InputError("probe answer position out of range");
  }
};

struct ProbeSet {
  std::vector<ProbeInstance> robustness;
  std::vector<ProbeInstance> utility;

  std::size_t size() const noexcept { return robustness.size() + utility.size(); }
};

namespace detail {

inline void require_probe_room(const toyvlm::ToyVlmConfig& cfg) {
  if (cfg.vocab_size < toyvlm::vocab::kMinVocab) {
    throw ConfigError("probes need vocab_size >= " + std::to_string(toyvlm::vocab::kMinVocab));
  }
  if (cfg.max_seq < cfg.n_vision_tokens + 4) throw ConfigError("probes need max_seq >= n_vision_tokens + 4");
}

inline std::vector<std::size_t> random_scene(const toyvlm::ToyVlmConfig& cfg, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> obj(toyvlm::vocab::kFirstObject, cfg.vocab_size - 1);
  std::vector<std::size_t> scene(cfg.n_vision_tokens);
  for (auto& s : scene) s = obj(rng);
  return scene;
}

}  // namespace detail

/// Balanced yes/no presence questions; even indices are YES.
inline std::vector<ProbeInstance> make_robustness_probes(const toyvlm::ToyVlmConfig& cfg, std::uint64_t seed,
                                                         std::size_t count = 64) {
  using namespace toyvlm::vocab;
  detail::require_probe_room(cfg);
  std::mt19937_64 rng(seed ^ 0x7265627573740000ULL);
  std::vector<ProbeInstance> out;
  for (std::size_t i = 0; i < count; ++i) {
    const bool yes = i % 2 == 0;
    auto scene = detail::random_scene(cfg, rng);
    std::vector<std::size_t> candidates;
    for (std::size_t o = kFirstObject; o < cfg.vocab_size; ++o) {
      const bool present = std::find(scene.begin(), scene.end(), o) != scene.end();
      if (present == yes) candidates.push_back(o);
    }
    if (candidates.empty()) {
      // Scene covers every object; drop one to make room for a NO question.
      scene.back() = scene.front();
      for (std::size_t o = kFirstObject; o < cfg.vocab_size; ++o)
        if (std::find(scene.begin(), scene.end(), o) == scene.end()) candidates.push_back(o);
    }
    const std::size_t q = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
    ProbeInstance p;
    p.tokens = scene;
    p.tokens.insert(p.tokens.end(), {kQuery, q, kAnswer});
    p.answer_position = p.tokens.size() - 1;
    p.gt_tokens = {yes ? kYes : kNo};
    p.neg_tokens = {yes ? kNo : kYes};
    p.task = TaskTag::robustness;
    out.push_back(std::move(p));
  }
  return out;
}

/// Four-way questions whose answer is (a + b) mod 4 over two queried objects.
inline std::vector<ProbeInstance> make_utility_probes(const toyvlm::ToyVlmConfig& cfg, std::uint64_t seed,
                                                      std::size_t count = 64) {
  using namespace toyvlm::vocab;
  detail::require_probe_room(cfg);
  std::mt19937_64 rng(seed ^ 0x7574696c00000000ULL);
  std::uniform_int_distribution<std::size_t> obj(kFirstObject, cfg.vocab_size - 1);
  std::vector<ProbeInstance> out;
  for (std::size_t i = 0; i < count; ++i) {
    ProbeInstance p;
    p.tokens = detail::random_scene(cfg, rng);
    const std::size_t a = obj(rng), b = obj(rng);
    p.tokens.insert(p.tokens.end(), {kQuestion, a, b, kAnswer});
    p.answer_position = p.tokens.size() - 1;
    const std::size_t correct = kChoiceA + (a + b) % kNumChoices;
    p.gt_tokens = {correct};
    for (std::size_t c = 0; c < kNumChoices; ++c)
      if (kChoiceA + c != correct) p.neg_tokens.push_back(kChoiceA + c);
    p.task = TaskTag::utility;
    out.push_back(std::move(p));
  }
  return out;
}

inline ProbeSet make_probe_set(const toyvlm::ToyVlmConfig& cfg, std::uint64_t seed, std::size_t per_task = 64) {
  return {make_robustness_probes(cfg, seed, per_task), make_utility_probes(cfg, seed, per_task)};
}

/// Disjointly seeded splits used for recovery training and held-out scoring.
enum class Split : std::uint64_t { reward = 0, train = 1, heldout = 2 };

inline ProbeSet make_split(const toyvlm::ToyVlmConfig& cfg, std::uint64_t seed, Split split,
                           std::size_t per_task = 64) {
  return make_probe_set(cfg, seed * 0x100000001b3ULL + static_cast<std::uint64_t>(split) * 0x9e3779b97f4a7c15ULL,
                        per_task);
}

}  // namespace planforge::rewards
