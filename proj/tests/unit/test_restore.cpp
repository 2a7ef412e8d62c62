// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <memory>

#include "bdmae/attacksim.hpp"
#include "bdmae/oracles.hpp"
#include "bdmae/restore.hpp"
#include "reference.hpp"

namespace bdmae {
namespace {

TEST(RestoreConfig, Validation) {
  EXPECT_NO_THROW(RestoreConfig{}.validate());
  EXPECT_THROW((RestoreConfig{{}, 0.05, 0.25}).validate(), InvalidArgument);
  EXPECT_THROW((RestoreConfig{{0.4, 0.5}, 0.05, 0.25}).validate(), InvalidArgument);
  EXPECT_THROW((RestoreConfig{{0.5}, 0.0, 0.25}).validate(), InvalidArgument);
  EXPECT_THROW((RestoreConfig{{0.5}, 0.05, 1.0}).validate(), InvalidArgument);
}

TEST(CombineScores, IsTheElementwiseMean) {
  ScoreMap a, b;
  for (int t = 0; t < kNumTokens; ++t) {
    a[t] = t * 0.01;
    b[t] = 1.0 - t * 0.002;
  }
  const ScoreMap s = combine_scores(a, b);
  for (int t = 0; t < kNumTokens; ++t) EXPECT_DOUBLE_EQ(s[t], (a[t] + b[t]) / 2);
}

TEST(AdjustThresholds, UnchangedWhenCoverageIsSmall) {
  ScoreMap s(0.0);
  for (int t = 0; t < 49; ++t) s[t] = 0.9;  // exactly 25%
  const auto th = adjust_thresholds(s);
  ASSERT_EQ(th.size(), 5u);
  EXPECT_DOUBLE_EQ(th[0], 0.6);
  EXPECT_DOUBLE_EQ(th[4], 0.4);
}

TEST(AdjustThresholds, RaisesUntilCoverageFitsTheCap) {
  ScoreMap s(0.0);
  // 60 tokens at 0.42 and 40 at 0.52: at 0.4 coverage is 100/196, at 0.45
  // it is 40/196 <= 25%, so one raise.
  for (int t = 0; t < 60; ++t) s[t] = 0.42;
  for (int t = 60; t < 100; ++t) s[t] = 0.52;
  const auto th = adjust_thresholds(s);
  EXPECT_NEAR(th[0], 0.65, 1e-12);
  EXPECT_NEAR(th[4], 0.45, 1e-12);
  EXPECT_LE(threshold_mask(s, th[4]).count(), 49);
}

TEST(AdjustThresholds, BoundedByIndependentSearch) {
  Prng prng(1);
  for (int trial = 0; trial < 100; ++trial) {
    ScoreMap s;
    for (double& v : s.values()) v = prng.uniform() * 1.5 - 0.2;
    const auto th = adjust_thresholds(s);
    int n = 0;
    while (true) {
      int covered = 0;
      for (double v : s.values()) covered += v >= 0.4 + n * 0.05 ? 1 : 0;
      if (covered <= 49) break;
      ++n;
    }
    EXPECT_NEAR(th[4], 0.4 + n * 0.05, 1e-12);
    EXPECT_NEAR(th[0] - th[4], 0.2, 1e-12);
  }
}

TEST(AdjustThresholds, RejectsNonFiniteScores) {
  ScoreMap s(0.0);
  s[3] = std::nan("");
  EXPECT_THROW(adjust_thresholds(s), InvalidArgument);
}

TEST(Purify, NestedMasksPassThroughAndOneCallPerThreshold) {
  const Image x = testing::random_image(2, 64, 64);
  ScoreMap s;
  Prng prng(3);
  for (double& v : s.values()) v = prng.uniform() * 0.8;
  const std::vector<double> th{0.75, 0.7, 0.65, 0.6, 0.55};
  const LaplaceInpaintRestorer g;
  const CountingRestorer cg(g);
  const Purification p = purify(x, s, th, cg);
  EXPECT_EQ(cg.calls(), 5);
  ASSERT_EQ(p.masks.size(), 5u);
  for (std::size_t k = 1; k < 5; ++k) EXPECT_TRUE(p.masks[k - 1].subset_of(p.masks[k]));
  const PixelMask outer = token_mask_to_pixel_mask(p.masks.back(), 64, 64);
  for (std::size_t px = 0; px < outer.data().size(); ++px) {
    if (outer.data()[px]) continue;
    for (int ch = 0; ch < 3; ++ch) ASSERT_EQ(p.image.data()[px * 3 + ch], x.data()[px * 3 + ch]);
  }
}

TEST(Purify, FusesLikeTheCoveringMean) {
  const Image x = testing::random_image(4, 48, 48);
  ScoreMap s;
  Prng prng(5);
  for (double& v : s.values()) v = prng.uniform();
  const std::vector<double> th{0.9, 0.8, 0.7};
  const LaplaceInpaintRestorer g;
  const Purification p = purify(x, s, th, g);
  std::vector<Image> images;
  std::vector<PixelMask> masks;
  for (double tau : th) {
    const Restoration r = restore_composite(x, threshold_mask(s, tau), g);
    images.push_back(r.image);
    masks.push_back(r.mask);
  }
  // Pixels no mask covers keep x; add them as a pass-through "restoration".
  images.push_back(x);
  PixelMask rest(48, 48, 0);
  for (int r = 0; r < 48; ++r) {
    for (int c = 0; c < 48; ++c) {
      bool any = false;
      for (std::size_t k = 0; k < th.size(); ++k) any = any || masks[k].at(r, c);
      rest.at(r, c) = any ? 0 : 1;
    }
  }
  masks.push_back(rest);
  EXPECT_LE(testing::max_abs_diff(p.image, testing::covering_mean(images, masks)), 1e-12);
}

TEST(Purify, EmptyMasksStillCallTheRestorer) {
  const Image x = testing::random_image(6, 32, 32);
  const EchoRestorer g;
  const CountingRestorer cg(g);
  const Purification p = purify(x, ScoreMap(0.0), {0.6, 0.5}, cg);
  EXPECT_EQ(cg.calls(), 2);
  EXPECT_EQ(p.image, x);
}

class DefendFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    world_ = std::make_shared<const SyntheticWorld>(5);
    spec_.size = 9;
    spec_.placement.random = true;
  }
  std::shared_ptr<const SyntheticWorld> world_;
  TriggerSpec spec_;
};

TEST_F(DefendFixture, RemovesTriggerWithTheFullBudget) {
  const SyntheticBackdooredClassifier f(world_, spec_, Label{0});
  const LaplaceInpaintRestorer g;
  Prng prng(7);
  const Image x = render_clean_image(*world_, Label{3}, 64, prng);
  const Image y = apply_trigger(x, spec_, prng).first;
  const DefenseReport r = defend(y, f, g, DefenseConfig{}, Prng(8));
  EXPECT_EQ(r.original_label, Label{0});
  EXPECT_EQ(r.purified_label, Label{3});
  EXPECT_EQ(r.classify_queries, 47);
  EXPECT_EQ(r.restore_queries, 50);
  EXPECT_EQ(r.masks.size(), 5u);
  for (std::size_t k = 1; k < r.masks.size(); ++k) {
    EXPECT_TRUE(r.masks[k - 1].subset_of(r.masks[k]));
  }
  EXPECT_NEAR(r.image_score_refined.sum(), r.image_score.sum(), 1e-9);
  EXPECT_NEAR(r.label_score_refined.sum(), r.label_score.sum(), 1e-9);
  for (int t = 0; t < kNumTokens; ++t) {
    EXPECT_DOUBLE_EQ(r.final_score[t], (r.image_score_refined[t] + r.label_score_refined[t]) / 2);
  }
}

TEST_F(DefendFixture, DeterministicAndStreamSensitive) {
  const SyntheticCleanClassifier f(world_);
  const LaplaceInpaintRestorer g;
  Prng prng(9);
  const Image x = render_clean_image(*world_, Label{1}, 64, prng);
  const DefenseReport a = defend(x, f, g, DefenseConfig{}, Prng(10));
  const DefenseReport b = defend(x, f, g, DefenseConfig{}, Prng(10));
  EXPECT_EQ(a.purified, b.purified);
  EXPECT_EQ(a.final_score, b.final_score);
  const DefenseReport c = defend(x, f, g, DefenseConfig{}, Prng(11));
  EXPECT_NE(a.image_score, c.image_score);
}

TEST_F(DefendFixture, OracleFailureCarriesStageAndCounts) {
  class Failing : public Restorer {
   public:
    Image restore(const Image&, const TokenMask&) const override {
      throw OracleError("restorer down");
    }
  };
  const SyntheticCleanClassifier f(world_);
  const Failing g;
  const Image x(64, 64, 0.5);
  try {
    defend(x, f, g, DefenseConfig{}, Prng(1));
    FAIL() << "expected DefenseError";
  } catch (const DefenseError& e) {
    EXPECT_EQ(e.stage(), "score-generation");
    EXPECT_EQ(e.partial().restore_queries, 1);
  }
}

}  // namespace
}  // namespace bdmae
