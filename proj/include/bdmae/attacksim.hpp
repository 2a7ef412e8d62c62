// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "bdmae/core.hpp"
#include "bdmae/oracles.hpp"
#include "bdmae/trigger.hpp"

namespace bdmae {

/// (1 - m) * x + m * theta with the trigger placed per `spec.placement`.
/// Returns the composited image and the full-size pixel mask m.
std::pair<Image, PixelMask> apply_trigger(const Image& x, const TriggerSpec& spec,
                                          Prng& prng);

struct LabeledImage {
  Image image;
  Label label;
};

struct TriggeredImage {
  Image image;
  Label label;   // ground truth
  Label target;  // eta(y)
  PixelMask trigger_mask;
};

struct Dataset {
  std::vector<LabeledImage> clean;
  std::vector<TriggeredImage> triggered;

  std::size_t size() const { return clean.size() + triggered.size(); }
};

struct CorpusOptions {
  int n_per_class = 20;
  int image_size = 64;
};

/// One clean image of `label`: the class base field plus low-frequency
/// colour noise and a couple of soft-edged shapes, bounded so the clean rule
/// still returns `label`.
Image render_clean_image(const SyntheticWorld& world, Label label, int image_size,
                         Prng& prng);

/// n_per_class clean images per class, and one triggered copy of each clean
/// image (spec i % specs.size() for clean image i). Every image draws from its
/// own fork of `prng`, so the corpus does not depend on generation order.
Dataset generate_corpus(const SyntheticWorld& world, std::span<const TriggerSpec> specs,
                        const CorpusOptions& options, const Prng& prng);

struct Metrics {
  double acc_c = 0.0;
  double acc_b = 0.0;
  double asr = 0.0;
  std::size_t n_clean = 0;
  std::size_t n_triggered = 0;
  std::size_t n_asr = 0;  // triggered images whose label differs from the target
};

/// Prediction for one dataset image. `index` is the image's position in the
/// dataset (clean images first), used to derive per-image random streams.
using DefenseFn = std::function<Label(const Image& image, std::size_t index)>;

/// Runs `defense` over both splits, spreading images over `jobs` threads.
/// Results are stored by index, so metrics do not depend on scheduling.
Metrics evaluate(const DefenseFn& defense, const Dataset& dataset, int jobs = 1);

/// Per-image predictions as computed by evaluate(), clean split first.
std::vector<Label> predict_all(const DefenseFn& defense, const Dataset& dataset,
                               int jobs = 1);

Metrics metrics_from_predictions(const Dataset& dataset,
                                 std::span<const Label> predictions);

}  // namespace bdmae
