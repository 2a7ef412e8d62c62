// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <atomic>
#include <memory>
#include <set>

#include "bdmae/attacksim.hpp"
#include "bdmae/oracles.hpp"

namespace bdmae {
namespace {

Dataset small_corpus(std::uint64_t seed, int n = 4) {
  const SyntheticWorld world(5);
  TriggerSpec spec;
  spec.size = 9;
  spec.placement.random = true;
  const TriggerSpec specs[] = {spec};
  return generate_corpus(world, specs, {n, 64}, Prng(seed));
}

TEST(Corpus, SizesLabelsAndTriggerMasks) {
  const Dataset d = small_corpus(1);
  ASSERT_EQ(d.clean.size(), 20u);
  ASSERT_EQ(d.triggered.size(), 20u);
  std::array<int, 5> per_class{};
  for (const auto& item : d.clean) ++per_class[item.label.id];
  for (int k : per_class) EXPECT_EQ(k, 4);
  for (std::size_t i = 0; i < d.triggered.size(); ++i) {
    const auto& t = d.triggered[i];
    EXPECT_EQ(t.label, d.clean[i].label);
    EXPECT_EQ(t.target, Label{0});
    int count = 0;
    for (auto v : t.trigger_mask.data()) count += v;
    EXPECT_EQ(count, 81);
    // Outside the trigger the triggered image is the clean image.
    for (std::size_t p = 0; p < t.trigger_mask.data().size(); ++p) {
      if (t.trigger_mask.data()[p]) continue;
      for (int ch = 0; ch < 3; ++ch) {
        ASSERT_EQ(t.image.data()[p * 3 + ch], d.clean[i].image.data()[p * 3 + ch]);
      }
    }
  }
}

TEST(Corpus, SameSeedSameCorpusDifferentSeedDifferent) {
  const Dataset a = small_corpus(2), b = small_corpus(2), c = small_corpus(3);
  for (std::size_t i = 0; i < a.clean.size(); ++i) {
    EXPECT_EQ(a.clean[i].image, b.clean[i].image);
    EXPECT_EQ(a.triggered[i].image, b.triggered[i].image);
  }
  EXPECT_NE(a.clean[0].image, c.clean[0].image);
}

TEST(Corpus, TriggerSpecsAlternate) {
  const SyntheticWorld world(5);
  TriggerSpec a, b;
  a.size = 5;
  a.placement.random = true;
  b = a;
  b.pattern = TriggerPattern::kCheckerboard;
  b.size = 4;
  const TriggerSpec specs[] = {a, b};
  const Dataset d = generate_corpus(world, specs, {2, 32}, Prng(4));
  for (std::size_t i = 0; i < d.triggered.size(); ++i) {
    int count = 0;
    for (auto v : d.triggered[i].trigger_mask.data()) count += v;
    EXPECT_EQ(count, i % 2 == 0 ? 25 : 16);
  }
}

TEST(Metrics, ComputedFromPredictions) {
  const Dataset d = small_corpus(5, 2);  // 10 clean, 10 triggered
  std::vector<Label> pred;
  for (std::size_t i = 0; i < d.clean.size(); ++i) {
    pred.push_back(i < 9 ? d.clean[i].label : Label{(d.clean[i].label.id + 1) % 5});
  }
  // Triggered: 4 go to the target, the rest keep their label.
  for (std::size_t j = 0; j < d.triggered.size(); ++j) {
    pred.push_back(j < 4 ? d.triggered[j].target : d.triggered[j].label);
  }
  const Metrics m = metrics_from_predictions(d, pred);
  EXPECT_DOUBLE_EQ(m.acc_c, 0.9);
  std::size_t attacked = 0, hits = 0, correct = 0;
  for (std::size_t j = 0; j < d.triggered.size(); ++j) {
    const auto& t = d.triggered[j];
    correct += pred[d.clean.size() + j] == t.label ? 1 : 0;
    if (t.label != t.target) {
      ++attacked;
      hits += pred[d.clean.size() + j] == t.target ? 1 : 0;
    }
  }
  EXPECT_EQ(m.n_asr, attacked);
  EXPECT_DOUBLE_EQ(m.asr, static_cast<double>(hits) / attacked);
  EXPECT_DOUBLE_EQ(m.acc_b, static_cast<double>(correct) / d.triggered.size());
}

TEST(Evaluate, IndependentOfJobCount) {
  const Dataset d = small_corpus(6, 2);
  const DefenseFn fn = [](const Image& img, std::size_t i) {
    return Label{static_cast<int>((i * 31 + static_cast<int>(img.at(0, 0, 0) * 100)) % 5)};
  };
  const auto one = predict_all(fn, d, 1);
  const auto four = predict_all(fn, d, 4);
  EXPECT_EQ(one, four);
  const Metrics a = evaluate(fn, d, 1), b = evaluate(fn, d, 3);
  EXPECT_EQ(a.acc_c, b.acc_c);
  EXPECT_EQ(a.asr, b.asr);
}

TEST(Evaluate, PropagatesTheFirstFailure) {
  const Dataset d = small_corpus(7, 2);
  std::atomic<int> calls{0};
  const DefenseFn fn = [&](const Image&, std::size_t i) -> Label {
    ++calls;
    if (i == 3) throw OracleError("boom");
    return Label{0};
  };
  EXPECT_THROW(predict_all(fn, d, 2), OracleError);
}

TEST(Evaluate, RequiresBothSplits) {
  Dataset d = small_corpus(8, 1);
  d.triggered.clear();
  const DefenseFn fn = [](const Image&, std::size_t) { return Label{0}; };
  EXPECT_THROW(evaluate(fn, d, 1), InvalidArgument);
}

TEST(Baseline, BackdoorSucceedsOnEveryAttackedImage) {
  const Dataset d = small_corpus(9, 6);
  auto world = std::make_shared<const SyntheticWorld>(5);
  TriggerSpec spec;
  spec.size = 9;
  spec.placement.random = true;
  const SyntheticBackdooredClassifier f(world, spec, Label{0});
  const Metrics m = evaluate([&](const Image& img, std::size_t) { return f.classify(img); }, d);
  EXPECT_EQ(m.acc_c, 1.0);
  EXPECT_EQ(m.asr, 1.0);
}

}  // namespace
}  // namespace bdmae
