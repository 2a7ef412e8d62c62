// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bdmae/core.hpp"
#include "bdmae/oracles.hpp"
#include "bdmae/refine.hpp"
#include "bdmae/scoregen.hpp"

namespace bdmae {

struct RestoreConfig {
  std::vector<double> base_thresholds{0.6, 0.55, 0.5, 0.45, 0.4};
  double step = 0.05;
  double coverage_cap = 0.25;

  void validate() const;
};

struct DefenseConfig {
  ScoreGenConfig scoregen{};
  RefineConfig refine{};
  RestoreConfig restore{};

  void validate() const;
};

/// Elementwise mean of the image- and label-based scores.
ScoreMap combine_scores(const ScoreMap& image_score, const ScoreMap& label_score);

/// Raises every threshold by `step` until at most `coverage_cap` of the tokens
/// score at or above the lowest threshold. Raise n yields base + n * step.
std::vector<double> adjust_thresholds(const ScoreMap& scores,
                                      const RestoreConfig& cfg = {});

/// Token mask of scores >= threshold.
TokenMask threshold_mask(const ScoreMap& scores, double threshold);

struct Purification {
  Image image;
  std::vector<TokenMask> masks;  // one per threshold, nested
};

/// Restores x once per threshold and fuses the restored pixels; pixels no
/// threshold mask covers are copied from x. Always issues one restore call
/// per threshold.
Purification purify(const Image& x, const ScoreMap& scores,
                    const std::vector<double>& thresholds, const Restorer& restorer);

struct DefenseReport {
  Label original_label;
  Label purified_label;
  ScoreMap image_score;          // S^i before refinement
  ScoreMap label_score;          // S^l before refinement
  ScoreMap image_score_refined;
  ScoreMap label_score_refined;
  ScoreMap final_score;          // S
  Grid mean_ssim;
  std::vector<double> thresholds;
  std::vector<TokenMask> masks;
  Image purified;
  long classify_queries = 0;  // includes the final prediction on the purified image
  long restore_queries = 0;
};

/// Raised when an oracle fails mid-pipeline; carries what was computed so far.
class DefenseError : public std::runtime_error {
 public:
  DefenseError(const std::string& stage, const std::string& what,
               DefenseReport partial)
      : std::runtime_error(stage + ": " + what), stage_(stage),
        partial_(std::move(partial)) {}
  const std::string& stage() const { return stage_; }
  const DefenseReport& partial() const { return partial_; }

 private:
  std::string stage_;
  DefenseReport partial_;
};

/// Full pipeline for one test image. The three random stages draw from
/// independent forks of `prng` (0: score generation, 1: image-score
/// refinement, 2: label-score refinement).
DefenseReport defend(const Image& x, const Classifier& classifier,
                     const Restorer& restorer, const DefenseConfig& cfg,
                     const Prng& prng);

}  // namespace bdmae
