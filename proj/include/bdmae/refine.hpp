// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "bdmae/core.hpp"
#include "bdmae/oracles.hpp"

namespace bdmae {

struct RefineConfig {
  int steps = 10;              // N_r
  double beta0 = 0.05;
  double adjacency_bonus = 0.5;  // u
  double image_threshold = 0.2;

  void validate() const;
};

enum class ScoreKind { kImage, kLabel };

/// The L highest-scoring tokens chosen for refinement.
struct RefineSet {
  int count = 0;  // L, always even
  TokenMask tokens;
};

/// L0 is the number of tokens scoring at least `image_threshold` (image
/// scores) or the rounded score sum (label scores). L is L0 rounded up to an
/// even number and clamped to [0, 196]. Ties in the top-L selection go to
/// the lower row-major token index.
RefineSet compute_refine_set(const ScoreMap& scores, ScoreKind kind,
                             const RefineConfig& cfg = {});

/// Source of the sigma_k multipliers; the default draws U(0,1) from a Prng.
using SigmaSource = std::function<double()>;

/// Grows a set T of L/2 tokens inside `refine_set`, seeded with its highest
/// score. Each step picks argmax over the remaining candidates of
/// (S[t] + u * [t 4-adjacent to T]) * sigma_t with a fresh sigma per
/// candidate per step.
TokenMask sample_topology_mask(const ScoreMap& scores, const TokenMask& refine_set,
                               int count, double adjacency_bonus,
                               const SigmaSource& sigma);
TokenMask sample_topology_mask(const ScoreMap& scores, const TokenMask& refine_set,
                               int count, double adjacency_bonus, Prng& prng);

/// Label-flip driven refinement. `prediction` must be f(x) from score
/// generation; it is not queried again. Each step issues one restore and
/// one classify call; nothing is queried when L is 0.
ScoreMap refine_scores(const ScoreMap& scores, ScoreKind kind, const Image& x,
                       Label prediction, const Classifier& classifier,
                       const Restorer& restorer, const RefineConfig& cfg,
                       Prng& prng);

/// True when the set tokens form one 4-connected component.
bool is_four_connected(const TokenMask& mask);

}  // namespace bdmae
