// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "bdmae/core.hpp"
#include "bdmae/oracles.hpp"
#include "bdmae/ssim.hpp"

namespace bdmae {

struct ScoreGenConfig {
  int outer_rounds = 5;   // N_o
  int inner_masks = 5;    // N_i
  int masked_count = kDefaultMaskedCount;
  SsimConfig ssim{};

  void validate() const;
};

/// A restoration composited onto the original image, together with the
/// pixel mask saying which pixels came from the restorer.
struct Restoration {
  Image image;
  PixelMask mask;
};

/// Original image plus its 224x224 resample, so that repeated restorations of
/// the same image resize it once.
class RestorationContext {
 public:
  explicit RestorationContext(const Image& x);
  const Image& original() const { return *x_; }
  const Image& resized() const { return x224_; }

 private:
  const Image* x_;
  Image x224_;
};

/// Restores the masked tokens of `x` with `restorer` on the 224 grid, resizes
/// back and composites: pixels outside the upsampled mask are bit-exact
/// copies of `x`.
Restoration restore_composite(const Image& x, const TokenMask& mask,
                              const Restorer& restorer);
Restoration restore_composite(const RestorationContext& ctx,
                              const TokenMask& mask, const Restorer& restorer);

/// Per-pixel mean of the restored pixels over the restorations covering each
/// pixel. Throws CoverageViolation when a pixel is covered by none.
Image fuse_restorations(std::span<const Image> restorations,
                        std::span<const PixelMask> masks);

struct ScoreGenResult {
  ScoreMap image_score;  // S^i
  ScoreMap label_score;  // S^l
  Label prediction;      // f(x)
  /// Mean over outer rounds of the SSIM map between x and the fused restoration.
  Grid mean_ssim;
  /// Masks actually used, outer-major (after coverage repair).
  std::vector<TokenMask> masks;
};

/// Repeated random masking and restoration: image-based score from SSIM
/// against the fused restorations, label-based score from the fraction of
/// masks that both cover a token and flip the prediction. Issues exactly
/// 1 + N_o * N_i classify calls and N_o * N_i restore calls.
ScoreGenResult generate_scores(const Image& x, const Classifier& classifier,
                               const Restorer& restorer,
                               const ScoreGenConfig& cfg, Prng& prng);

/// The random masks of one outer round: N_i uniform masks, then every token
/// left unmasked by all of them is added to a single uniformly chosen mask.
std::vector<TokenMask> sample_covering_masks(Prng& prng, int count,
                                             int masked_count);

}  // namespace bdmae
