// SPDX-License-Identifier: Apache-2.0
#include "bdmae/restore.hpp"

#include <cmath>

namespace bdmae {

void RestoreConfig::validate() const {
  if (base_thresholds.empty()) throw InvalidArgument("at least one threshold required");
  for (std::size_t k = 1; k < base_thresholds.size(); ++k) {
    if (!(base_thresholds[k] < base_thresholds[k - 1])) {
      throw InvalidArgument("thresholds must be strictly decreasing");
    }
  }
  for (double t : base_thresholds) {
    if (!std::isfinite(t)) throw InvalidArgument("thresholds must be finite");
  }
  if (!(step > 0.0)) throw InvalidArgument("threshold step must be positive");
  if (!(coverage_cap > 0.0 && coverage_cap < 1.0)) {
    throw InvalidArgument("coverage cap must lie in (0,1)");
  }
}

void DefenseConfig::validate() const {
  scoregen.validate();
  refine.validate();
  restore.validate();
}

ScoreMap combine_scores(const ScoreMap& image_score, const ScoreMap& label_score) {
  ScoreMap s;
  for (int t = 0; t < kNumTokens; ++t) s[t] = (image_score[t] + label_score[t]) / 2.0;
  return s;
}

TokenMask threshold_mask(const ScoreMap& scores, double threshold) {
  TokenMask m;
  for (int t = 0; t < kNumTokens; ++t) {
    if (scores[t] >= threshold) m.set(t);
  }
  return m;
}

std::vector<double> adjust_thresholds(const ScoreMap& scores,
                                      const RestoreConfig& cfg) {
  cfg.validate();
  if (!scores.all_finite()) throw InvalidArgument("scores must be finite");
  const double lowest = cfg.base_thresholds.back();
  auto coverage = [&](double tau) {
    return static_cast<double>(threshold_mask(scores, tau).count()) / kNumTokens;
  };
  long raises = 0;
  while (coverage(lowest + raises * cfg.step) > cfg.coverage_cap) ++raises;

  std::vector<double> out;
  out.reserve(cfg.base_thresholds.size());
  for (double t : cfg.base_thresholds) out.push_back(t + raises * cfg.step);
  return out;
}

Purification purify(const Image& x, const ScoreMap& scores,
                    const std::vector<double>& thresholds, const Restorer& restorer) {
  for (std::size_t k = 1; k < thresholds.size(); ++k) {
    if (thresholds[k] > thresholds[k - 1]) {
      throw InvalidArgument("purification thresholds must be descending");
    }
  }
  const RestorationContext ctx(x);
  const std::size_t n = x.pixel_count();
  std::vector<double> acc(n * 3, 0.0);
  std::vector<int> covered(n, 0);

  Purification out{x, {}};
  for (double tau : thresholds) {
    const TokenMask mask = threshold_mask(scores, tau);
    const Restoration r = restore_composite(ctx, mask, restorer);
    for (std::size_t p = 0; p < n; ++p) {
      if (!r.mask.data()[p]) continue;
      ++covered[p];
      for (int ch = 0; ch < 3; ++ch) acc[p * 3 + ch] += r.image.data()[p * 3 + ch];
    }
    out.masks.push_back(mask);
  }
  for (std::size_t p = 0; p < n; ++p) {
    if (covered[p] == 0) continue;
    for (int ch = 0; ch < 3; ++ch) {
      out.image.data()[p * 3 + ch] = acc[p * 3 + ch] / covered[p];
    }
  }
  return out;
}

DefenseReport defend(const Image& x, const Classifier& classifier,
                     const Restorer& restorer, const DefenseConfig& cfg,
                     const Prng& prng) {
  cfg.validate();
  validate_image(x);
  const CountingClassifier f(classifier);
  const CountingRestorer g(restorer);

  DefenseReport report;
  std::string stage = "score-generation";
  try {
    Prng gen_stream = prng.fork(0);
    ScoreGenResult gen = generate_scores(x, f, g, cfg.scoregen, gen_stream);
    report.original_label = gen.prediction;
    report.image_score = gen.image_score;
    report.label_score = gen.label_score;
    report.mean_ssim = std::move(gen.mean_ssim);

    stage = "image-score-refinement";
    Prng image_stream = prng.fork(1);
    report.image_score_refined =
        refine_scores(report.image_score, ScoreKind::kImage, x, gen.prediction, f, g,
                      cfg.refine, image_stream);

    stage = "label-score-refinement";
    Prng label_stream = prng.fork(2);
    report.label_score_refined =
        refine_scores(report.label_score, ScoreKind::kLabel, x, gen.prediction, f, g,
                      cfg.refine, label_stream);

    stage = "purification";
    report.final_score =
        combine_scores(report.image_score_refined, report.label_score_refined);
    report.thresholds = adjust_thresholds(report.final_score, cfg.restore);
    Purification purified = purify(x, report.final_score, report.thresholds, g);
    report.masks = std::move(purified.masks);
    report.purified = std::move(purified.image);

    stage = "final-prediction";
    report.purified_label = f.classify(report.purified);
  } catch (const std::exception& e) {
    report.classify_queries = f.calls();
    report.restore_queries = g.calls();
    throw DefenseError(stage, e.what(), std::move(report));
  }
  report.classify_queries = f.calls();
  report.restore_queries = g.calls();
  return report;
}

}  // namespace bdmae
