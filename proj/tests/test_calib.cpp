#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "planforge/calib/calibration.hpp"

using namespace planforge;
using namespace planforge::calib;
using diffmath::Tensor2;

namespace {

toyvlm::ToyVlmParams model(std::uint64_t seed) {
  toyvlm::ToyVlmConfig c;
  c.seed = seed;
  return toyvlm::init_model(c);
}

Tensor2 random_stochastic_slice(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  // Rows of a softmax restricted to a subset of columns: non-negative, sum <= 1.
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor2 t(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += (t(r, c) = u(rng));
    const double keep = u(rng);
    for (std::size_t c = 0; c < cols; ++c) t(r, c) *= keep / s;
  }
  return t;
}

double triple_loop_sensitivity(const std::vector<Tensor2>& heads) {
  double best = -1.0;
  for (std::size_t t = 0; t < heads[0].rows(); ++t) {
    double total = 0.0;
    for (std::size_t h = 0; h < heads.size(); ++h)
      for (std::size_t v = 0; v < heads[0].cols(); ++v) total += heads[h](t, v);
    best = std::max(best, total / static_cast<double>(heads.size()));
  }
  return best;
}

}  // namespace

TEST(Rms, ConstantAndHandValues) {
  std::vector<Tensor2> c = {Tensor2(3, 4, -2.5), Tensor2(1, 4, -2.5)};
  EXPECT_DOUBLE_EQ(rms(c), 2.5);
  std::vector<Tensor2> two = {Tensor2::row_vector(std::vector<double>{3.0, 4.0})};
  EXPECT_NEAR(rms(two), std::sqrt(12.5), 1e-15);
  EXPECT_NEAR(rms(two), 3.5355339059, 1e-9);
  EXPECT_THROW(rms(std::vector<Tensor2>{}), UsageError);
}

TEST(ActivationRms, MatchesFlatLoopOverTraces) {
  const auto p = model(4);
  const auto batch = make_calibration_batch(p.config, 9);
  const auto got = activation_rms(p, batch);
  ASSERT_EQ(got.size(), 4u);
  toyvlm::ForwardOptions opts;
  opts.capture_mlp_inputs = true;
  std::vector<double> sq(4, 0.0);
  std::vector<std::size_t> n(4, 0);
  for (const auto& seq : batch.sequences) {
    const auto tr = toyvlm::forward(p, toyvlm::MaskSet{}, seq, opts);
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t r = 0; r < tr.mlp_inputs[b].rows(); ++r)
        for (std::size_t c = 0; c < tr.mlp_inputs[b].cols(); ++c) {
          sq[b] += tr.mlp_inputs[b](r, c) * tr.mlp_inputs[b](r, c);
          ++n[b];
        }
  }
  for (std::size_t b = 0; b < 4; ++b) {
    EXPECT_NEAR(got[b], std::sqrt(sq[b] / static_cast<double>(n[b])), 1e-12);
    EXPECT_GE(got[b], 0.0);
  }
}

TEST(ActivationRms, EmptyBatchIsUsageError) {
  const auto p = model(1);
  CalibrationBatch empty;
  empty.n_vision = p.config.n_vision_tokens;
  EXPECT_THROW(activation_rms(p, empty), UsageError);
}

TEST(ExampleSensitivity, HandExamples) {
  Tensor2 a(3, 2);
  a(0, 0) = 0.1, a(0, 1) = 0.1;
  a(1, 0) = 0.3, a(1, 1) = 0.4;
  a(2, 0) = 0.4, a(2, 1) = 0.0;
  std::vector<Tensor2> one = {a};
  EXPECT_NEAR(example_sensitivity(one), 0.7, 1e-15);
  std::vector<Tensor2> twice = {a, a};
  EXPECT_NEAR(example_sensitivity(twice), 0.7, 1e-15);
}

TEST(ExampleSensitivity, MatchesTripleLoopAndIsPermutationInvariant) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor2> heads;
    for (int h = 0; h < 4; ++h) heads.push_back(random_stochastic_slice(rng, 6, 5));
    const double s = example_sensitivity(heads);
    EXPECT_NEAR(s, triple_loop_sensitivity(heads), 1e-14);
    EXPECT_LE(s, 1.0 + 1e-12);

    auto shuffled = heads;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_NEAR(example_sensitivity(shuffled), s, 1e-14);

    std::vector<std::size_t> perm(6);
    for (std::size_t i = 0; i < 6; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Tensor2> rows_perm;
    for (const auto& h : heads) {
      Tensor2 t(6, 5);
      for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < 5; ++c) t(r, c) = h(perm[r], c);
      rows_perm.push_back(t);
    }
    EXPECT_NEAR(example_sensitivity(rows_perm), s, 1e-14);
  }
}

TEST(VisualSensitivity, EqualsMeanOfPerExampleLoopOracle) {
  const auto p = model(6);
  const auto batch = make_calibration_batch(p.config, 2);
  const auto got = visual_sensitivity(p, batch);
  toyvlm::ForwardOptions opts;
  opts.capture_attention = true;
  std::vector<double> acc(4, 0.0);
  for (const auto& seq : batch.sequences) {
    const auto tr = toyvlm::forward(p, toyvlm::MaskSet{}, seq, opts);
    for (std::size_t b = 0; b < 4; ++b) acc[b] += triple_loop_sensitivity(tr.attention[b]);
  }
  for (std::size_t b = 0; b < 4; ++b) {
    EXPECT_NEAR(got[b], acc[b] / static_cast<double>(batch.sequences.size()), 1e-12);
    EXPECT_GE(got[b], 0.0);
    EXPECT_LE(got[b], 1.0);
  }
}

TEST(VisualSensitivity, NoLanguageTokensIsUsageError) {
  const auto p = model(6);
  CalibrationBatch b;
  b.n_vision = p.config.n_vision_tokens;
  b.sequences.assign(2, std::vector<std::size_t>(p.config.n_vision_tokens, 10));
  EXPECT_THROW(visual_sensitivity(p, b), UsageError);
}

TEST(CalibrationBatch, SeededAndWellFormed) {
  toyvlm::ToyVlmConfig cfg;
  const auto a = make_calibration_batch(cfg, 5);
  const auto b = make_calibration_batch(cfg, 5);
  EXPECT_EQ(a.sequences, b.sequences);
  EXPECT_NE(a.sequences, make_calibration_batch(cfg, 6).sequences);
  ASSERT_EQ(a.sequences.size(), 16u);
  for (const auto& s : a.sequences) {
    EXPECT_EQ(s.size(), cfg.max_seq);
    for (std::size_t i = 0; i < cfg.n_vision_tokens; ++i) EXPECT_GE(s[i], toyvlm::vocab::kFirstObject);
  }
}

TEST(BuildStates, ShapesPreferenceSlotsAndDeterminism) {
  const auto p = model(8);
  const auto batch = make_calibration_batch(p.config, 1);
  ProfileCache cache;
  const Budget budget{0.2, 0.5};
  const Preference w{0.6, 0.3, 0.1};
  const auto s1 = build_states(p, batch, budget, w, cache);
  const auto s2 = build_states(p, batch, budget, w, cache);
  ASSERT_EQ(s1.size(), 4u);
  EXPECT_EQ(s1, s2);
  EXPECT_EQ(cache.computations(), 1u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(s1[i].preference, w);
    EXPECT_DOUBLE_EQ(s1[i].position, static_cast<double>(i) / 4.0);
    EXPECT_GE(s1[i].visual_sensitivity, 0.0);
    EXPECT_LE(s1[i].visual_sensitivity, 1.0);
  }

  const auto s3 = build_states(p, batch, budget, Preference{0.1, 0.1, 0.8}, cache);
  EXPECT_EQ(cache.computations(), 1u);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto f1 = s1[i].features(), f3 = s3[i].features();
    for (std::size_t k = 0; k < kFeatureDim; ++k) {
      if (k >= kPreferenceOffset) {
        EXPECT_NE(f1[k], f3[k]);
      } else {
        EXPECT_EQ(f1[k], f3[k]);
      }
    }
  }

  auto other = p;
  other.blocks[0].gate(0, 0) += 1.0;
  build_states(other, batch, budget, w, cache);
  EXPECT_EQ(cache.computations(), 2u);
}

TEST(BuildStates, InvalidBudgetAndPreference) {
  const auto p = model(8);
  const auto batch = make_calibration_batch(p.config, 1);
  ProfileCache cache;
  EXPECT_THROW(build_states(p, batch, Budget{0.5, 0.2}, Preference{}, cache), ConfigError);
  EXPECT_THROW(build_states(p, batch, Budget{-0.1, 0.2}, Preference{}, cache), ConfigError);
  EXPECT_THROW(build_states(p, batch, Budget{0.2, 0.5}, Preference{0.5, 0.5, 0.5}, cache), InputError);
}

TEST(Profile, JsonRoundTripAndWeightStats) {
  const auto p = model(3);
  const auto prof = calibrate(p, make_calibration_batch(p.config, 4));
  const auto back = profile_from_json(nlohmann::json::parse(profile_to_json(prof).dump()));
  EXPECT_EQ(back, prof);
  const auto g = abs_mean_std(Tensor2::row_vector(std::vector<double>{1.0, -3.0}));
  EXPECT_DOUBLE_EQ(g[0], 2.0);
  EXPECT_DOUBLE_EQ(g[1], 1.0);
  EXPECT_THROW(profile_from_json(nlohmann::json::object()), LoadError);
}
