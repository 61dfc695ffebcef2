#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "planforge/calib/calibration.hpp"
#include "planforge/pruner/pruner.hpp"
#include "support/submatrix.hpp"

using namespace planforge;
using namespace planforge::pruner;

namespace {

toyvlm::ToyVlmParams model(std::uint64_t seed) {
  toyvlm::ToyVlmConfig c;
  c.seed = seed;
  return toyvlm::init_model(c);
}

policy::PruningPlan plan_with(std::vector<double> ratios, std::size_t width = 64) {
  const std::vector<std::size_t> widths(ratios.size(), width);
  policy::PruningPlan p;
  for (std::size_t i = 0; i < ratios.size(); ++i) p.layer_ids.push_back(i);
  p.ratios = std::move(ratios);
  p.realized_sparsity = policy::realized_sparsity(p.ratios, widths);
  return p;
}

std::vector<std::size_t> tokens(std::mt19937_64& rng, std::size_t n = 14) {
  std::uniform_int_distribution<std::size_t> t(0, 31);
  std::vector<std::size_t> out(n);
  for (auto& x : out) x = t(rng);
  return out;
}

}  // namespace

TEST(ScoreRows, HandExampleAndLinearity) {
  toyvlm::ToyVlmConfig c;
  c.d_model = 2;
  c.n_heads = 1;
  c.n_blocks = 1;
  c.d_ff = 2;
  auto p = toyvlm::init_model(c);
  p.blocks[0].gate = Tensor2::from_rows({{1.0, -2.0}, {0.5, 0.5}});
  p.blocks[0].up = Tensor2::from_rows({{0.0, 0.0}, {-1.0, 0.0}});
  const std::vector<double> rms = {3.0};
  const auto s = score_rows(p, rms);
  EXPECT_DOUBLE_EQ(s.blocks[0][0], 9.0);
  EXPECT_DOUBLE_EQ(s.blocks[0][1], 6.0);
  const std::vector<double> doubled = {6.0};
  const auto s2 = score_rows(p, doubled);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(s2.blocks[0][i], 2.0 * s.blocks[0][i]);
}

TEST(ScoreRows, MatchesLoopOracle) {
  const auto p = model(2);
  const std::vector<double> rms = {0.5, 1.0, 1.5, 2.0};
  const auto s = score_rows(p, rms);
  for (std::size_t b = 0; b < 4; ++b) {
    const auto& blk = p.blocks[b];
    for (std::size_t i = 0; i < 64; ++i) {
      double acc = 0.0;
      for (std::size_t c = 0; c < 32; ++c) acc += std::abs(blk.gate(i, c)) + std::abs(blk.up(i, c));
      EXPECT_NEAR(s.blocks[b][i], acc * rms[b], 1e-12);
      EXPECT_GE(s.blocks[b][i], 0.0);
    }
  }
}

TEST(BuildMasks, EndpointsAndSortOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  RowScoreTable t;
  t.blocks.assign(1, std::vector<double>(8));
  for (int trial = 0; trial < 100; ++trial) {
    for (auto& v : t.blocks[0]) v = u(rng);
    EXPECT_EQ(build_masks(t, plan_with({0.0}, 8)).zeros(0), 0u);
    EXPECT_EQ(build_masks(t, plan_with({1.0}, 8)).zeros(0), 8u);
    const auto m = build_masks(t, plan_with({0.25}, 8));
    std::vector<std::size_t> idx(8);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return t.blocks[0][a] < t.blocks[0][b]; });
    EXPECT_EQ(m.zeros(0), 2u);
    EXPECT_EQ(m.blocks[0][idx[0]], 0);
    EXPECT_EQ(m.blocks[0][idx[1]], 0);
  }
}

TEST(BuildMasks, TiesPruneLowerIndexFirst) {
  RowScoreTable t;
  t.blocks = {{5.0, 1.0, 1.0, 1.0, 0.5, 1.0}};
  const auto m = build_masks(t, plan_with({0.5}, 6));
  EXPECT_EQ(m.blocks[0], (std::vector<std::uint8_t>{1, 0, 0, 1, 0, 1}));
  EXPECT_THROW(build_masks(t, plan_with({0.5, 0.5}, 6)), DimensionError);
}

TEST(BuildMasks, NestedUnderIncreasingRatio) {
  const auto p = model(5);
  const auto scores = score_rows(p, std::vector<double>{1.0, 1.0, 1.0, 1.0});
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> r(4), r2(4);
    for (std::size_t l = 0; l < 4; ++l) {
      r[l] = u(rng);
      r2[l] = std::min(1.0, r[l] + u(rng) * (1.0 - r[l]));
    }
    const auto a = build_masks(scores, plan_with(r)), b = build_masks(scores, plan_with(r2));
    for (std::size_t l = 0; l < 4; ++l)
      for (std::size_t i = 0; i < 64; ++i) {
        if (!a.blocks[l][i]) {
          EXPECT_EQ(b.blocks[l][i], 0);
        }
      }
  }
}

TEST(BuildMasks, RealizedSparsityMatchesMaskCount) {
  const auto p = model(6);
  const auto scores = score_rows(p, std::vector<double>{1.0, 2.0, 3.0, 4.0});
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto plan = plan_with({u(rng), u(rng), u(rng), u(rng)});
    const auto m = build_masks(scores, plan);
    EXPECT_DOUBLE_EQ(plan.realized_sparsity, mask_sparsity(m));
    for (std::size_t l = 0; l < 4; ++l) EXPECT_EQ(m.zeros(l), policy::pruned_count(plan.ratios[l], 64));
  }
}

TEST(ApplyPlan, FullMasksLeaveForwardUnchanged) {
  const auto p = model(7);
  std::mt19937_64 rng(6);
  const auto t = tokens(rng);
  const auto view = apply_plan(p, MaskSet::full(4, 64));
  EXPECT_EQ(forward(view, t).logits, toyvlm::forward(p, MaskSet{}, t).logits);
  EXPECT_EQ(materialize(p, MaskSet::full(4, 64)), p);
}

TEST(ApplyPlan, MaskedEqualsSubmatrixAndMaterialized) {
  const auto p = model(8);
  const auto scores = score_rows(p, std::vector<double>{1.0, 1.0, 1.0, 1.0});
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = build_masks(scores, plan_with({u(rng), u(rng), u(rng), u(rng)}));
    const auto t = tokens(rng);
    const auto a = forward(apply_plan(p, m), t).logits;
    const auto b = toyvlm::forward(test_support::submatrix_params(p, m), MaskSet{}, t).logits;
    const auto mat = materialize(p, m);
    const auto c = toyvlm::forward(mat, MaskSet{}, t).logits;
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_NEAR(a[i], b[i], 1e-10);
      EXPECT_NEAR(a[i], c[i], 1e-10);
    }
    for (std::size_t l = 0; l < 4; ++l)
      for (std::size_t j = 0; j < 64; ++j) {
        if (m.blocks[l][j]) continue;
        for (double v : mat.blocks[l].gate.row(j)) EXPECT_EQ(v, 0.0);
        for (std::size_t r = 0; r < 32; ++r) EXPECT_EQ(mat.blocks[l].down(r, j), 0.0);
      }
    EXPECT_EQ(materialize(mat, m), mat);
  }
}

TEST(ApplyPlan, OriginalUntouchedAndShapeErrors) {
  const auto p = model(9);
  const auto copy = p;
  MaskSet m = MaskSet::full(4, 64);
  m.blocks[1][3] = 0;
  (void)materialize(p, m);
  (void)apply_plan(p, m);
  EXPECT_EQ(p, copy);
  EXPECT_THROW(apply_plan(p, MaskSet::full(3, 64)), UsageError);
  EXPECT_THROW(materialize(p, MaskSet::full(4, 63)), UsageError);
}

TEST(MaskManifest, RoundTrip) {
  MaskSet m = MaskSet::full(3, 10);
  m.blocks[0][2] = m.blocks[2][9] = m.blocks[2][0] = 0;
  const auto j = nlohmann::json::parse(mask_manifest(m).dump());
  EXPECT_EQ(j["2"], (std::vector<std::size_t>{0, 9}));
  const std::vector<std::size_t> widths(3, 10);
  EXPECT_EQ(masks_from_manifest(j, widths), m);
  auto bad = j;
  bad["1"] = {10};
  EXPECT_THROW(masks_from_manifest(bad, widths), LoadError);
}
