// SPDX-License-Identifier: Apache-2.0
#include "bdmae/refine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bdmae/scoregen.hpp"

namespace bdmae {

void RefineConfig::validate() const {
  if (steps < 0) throw InvalidArgument("N_r must be >= 0");
  if (!(beta0 > 0.0)) throw InvalidArgument("beta0 must be positive");
  if (!(adjacency_bonus >= 0.0)) throw InvalidArgument("u must be >= 0");
}

RefineSet compute_refine_set(const ScoreMap& scores, ScoreKind kind,
                             const RefineConfig& cfg) {
  long base = 0;
  if (kind == ScoreKind::kImage) {
    for (double v : scores.values()) {
      if (v >= cfg.image_threshold) ++base;
    }
  } else {
    base = std::lround(scores.sum());
  }
  RefineSet set;
  if (base <= 0) return set;
  const long even = base % 2 == 0 ? base : base + 1;
  set.count = static_cast<int>(std::min<long>(even, kNumTokens));

  std::array<int, kNumTokens> order;
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  for (int i = 0; i < set.count; ++i) set.tokens.set(order[i]);
  return set;
}

namespace {

bool adjacent_to(const TokenMask& set, int token) {
  const int r = token / kTokenGrid;
  const int c = token % kTokenGrid;
  return (r > 0 && set.test(r - 1, c)) || (r + 1 < kTokenGrid && set.test(r + 1, c)) ||
         (c > 0 && set.test(r, c - 1)) || (c + 1 < kTokenGrid && set.test(r, c + 1));
}

}  // namespace

TokenMask sample_topology_mask(const ScoreMap& scores, const TokenMask& refine_set,
                               int count, double adjacency_bonus,
                               const SigmaSource& sigma) {
  if (count < 2 || count % 2 != 0) {
    throw InvalidArgument("topology sampling needs an even L >= 2, got " +
                          std::to_string(count));
  }
  if (refine_set.count() != count) {
    throw InvalidArgument("refine set must contain exactly L tokens");
  }
  std::vector<int> candidates;
  for (int t = 0; t < kNumTokens; ++t) {
    if (refine_set.test(t)) candidates.push_back(t);
  }

  TokenMask selected;
  int seed = candidates.front();
  for (int t : candidates) {
    if (scores[t] > scores[seed]) seed = t;
  }
  selected.set(seed);

  for (int size = 1; size < count / 2; ++size) {
    int best = -1;
    double best_value = 0.0;
    for (int t : candidates) {
      if (selected.test(t)) continue;
      const double bonus = adjacent_to(selected, t) ? adjacency_bonus : 0.0;
      const double value = (scores[t] + bonus) * sigma();
      if (best < 0 || value > best_value) {
        best = t;
        best_value = value;
      }
    }
    selected.set(best);
  }
  return selected;
}

TokenMask sample_topology_mask(const ScoreMap& scores, const TokenMask& refine_set,
                               int count, double adjacency_bonus, Prng& prng) {
  return sample_topology_mask(scores, refine_set, count, adjacency_bonus,
                              [&prng] { return prng.uniform(); });
}

ScoreMap refine_scores(const ScoreMap& scores, ScoreKind kind, const Image& x,
                       Label prediction, const Classifier& classifier,
                       const Restorer& restorer, const RefineConfig& cfg,
                       Prng& prng) {
  cfg.validate();
  ScoreMap refined = scores;
  const RefineSet set = compute_refine_set(scores, kind, cfg);
  if (set.count == 0 || cfg.steps == 0) return refined;

  const RestorationContext ctx(x);
  for (int step = 0; step < cfg.steps; ++step) {
    const TokenMask chosen = sample_topology_mask(refined, set.tokens, set.count,
                                                  cfg.adjacency_bonus, prng);
    const TokenMask rest = set.tokens - chosen;
    const Restoration r = restore_composite(ctx, chosen, restorer);
    const bool flipped = classifier.classify(r.image) != prediction;
    const double beta = flipped ? cfg.beta0 : -cfg.beta0;
    for (int t = 0; t < kNumTokens; ++t) {
      if (chosen.test(t)) {
        refined[t] += beta;
      } else if (rest.test(t)) {
        refined[t] -= beta;
      }
    }
  }
  return refined;
}

bool is_four_connected(const TokenMask& mask) {
  if (mask.none()) return false;
  int start = 0;
  while (!mask.test(start)) ++start;
  TokenMask seen;
  seen.set(start);
  std::vector<int> stack{start};
  int reached = 1;
  while (!stack.empty()) {
    const int t = stack.back();
    stack.pop_back();
    const int r = t / kTokenGrid;
    const int c = t % kTokenGrid;
    const int nbrs[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
    for (const auto& n : nbrs) {
      if (n[0] < 0 || n[0] >= kTokenGrid || n[1] < 0 || n[1] >= kTokenGrid) continue;
      const int nt = n[0] * kTokenGrid + n[1];
      if (!mask.test(nt) || seen.test(nt)) continue;
      seen.set(nt);
      stack.push_back(nt);
      ++reached;
    }
  }
  return reached == mask.count();
}

}  // namespace bdmae
