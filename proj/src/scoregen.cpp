// SPDX-License-Identifier: Apache-2.0
#include "bdmae/scoregen.hpp"

namespace bdmae {

void ScoreGenConfig::validate() const {
  if (outer_rounds < 1) throw InvalidArgument("N_o must be >= 1");
  if (inner_masks < 1) throw InvalidArgument("N_i must be >= 1");
  if (masked_count < 1 || masked_count > kNumTokens) {
    throw InvalidArgument("masked_count must lie in (0,196]");
  }
  ssim.validate();
}

RestorationContext::RestorationContext(const Image& x)
    : x_(&x), x224_(interpolate_image(x, kRestorerSize, kRestorerSize)) {}

Restoration restore_composite(const Image& x, const TokenMask& mask,
                              const Restorer& restorer) {
  return restore_composite(RestorationContext(x), mask, restorer);
}

Restoration restore_composite(const RestorationContext& ctx,
                              const TokenMask& mask, const Restorer& restorer) {
  const Image& x = ctx.original();
  const int h = x.height();
  const int w = x.width();
  Image restored = restorer.restore(ctx.resized(), mask);
  validate_restoration(restored);
  const Image back = interpolate_image(restored, h, w);

  Restoration out{x, token_mask_to_pixel_mask(mask, h, w)};
  for (std::size_t p = 0; p < out.mask.pixel_count(); ++p) {
    if (!out.mask.data()[p]) continue;
    for (int ch = 0; ch < 3; ++ch) out.image.data()[p * 3 + ch] = back.data()[p * 3 + ch];
  }
  return out;
}

Image fuse_restorations(std::span<const Image> restorations,
                        std::span<const PixelMask> masks) {
  if (restorations.empty() || restorations.size() != masks.size()) {
    throw InvalidArgument("fusion needs equally many restorations and masks");
  }
  const Image& first = restorations.front();
  for (std::size_t i = 0; i < restorations.size(); ++i) {
    if (!restorations[i].same_shape(first) ||
        masks[i].height() != first.height() || masks[i].width() != first.width()) {
      throw InvalidArgument("fusion inputs must share one size");
    }
  }
  Image out(first.height(), first.width(), 0.0);
  const std::size_t n = first.pixel_count();
  for (std::size_t p = 0; p < n; ++p) {
    int covered = 0;
    double acc[3] = {0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < restorations.size(); ++i) {
      if (!masks[i].data()[p]) continue;
      ++covered;
      for (int ch = 0; ch < 3; ++ch) acc[ch] += restorations[i].data()[p * 3 + ch];
    }
    if (covered == 0) {
      throw CoverageViolation("pixel " + std::to_string(p) +
                              " is covered by no restoration mask");
    }
    for (int ch = 0; ch < 3; ++ch) out.data()[p * 3 + ch] = acc[ch] / covered;
  }
  return out;
}

std::vector<TokenMask> sample_covering_masks(Prng& prng, int count,
                                             int masked_count) {
  std::vector<TokenMask> masks;
  masks.reserve(count);
  TokenMask covered;
  for (int i = 0; i < count; ++i) {
    masks.push_back(sample_uniform_token_mask(prng, masked_count));
    covered = covered | masks.back();
  }
  if (covered.count() == kNumTokens) return masks;
  TokenMask& repaired = masks[prng.below(count)];
  for (int t = 0; t < kNumTokens; ++t) {
    if (!covered.test(t)) repaired.set(t);
  }
  return masks;
}

ScoreGenResult generate_scores(const Image& x, const Classifier& classifier,
                               const Restorer& restorer,
                               const ScoreGenConfig& cfg, Prng& prng) {
  cfg.validate();
  validate_image(x);

  ScoreGenResult result;
  result.prediction = classifier.classify(x);
  result.mean_ssim = Grid(x.height(), x.width(), 0.0);

  const RestorationContext ctx(x);
  std::array<int, kNumTokens> flipped_and_masked{};
  std::vector<Image> images(cfg.inner_masks);
  std::vector<PixelMask> pixel_masks(cfg.inner_masks);

  for (int o = 0; o < cfg.outer_rounds; ++o) {
    const auto masks = sample_covering_masks(prng, cfg.inner_masks, cfg.masked_count);
    for (int i = 0; i < cfg.inner_masks; ++i) {
      Restoration r = restore_composite(ctx, masks[i], restorer);
      const Label predicted = classifier.classify(r.image);
      if (predicted != result.prediction) {
        for (int t = 0; t < kNumTokens; ++t) {
          if (masks[i].test(t)) ++flipped_and_masked[t];
        }
      }
      images[i] = std::move(r.image);
      pixel_masks[i] = std::move(r.mask);
      result.masks.push_back(masks[i]);
    }
    const Image fused = fuse_restorations(images, pixel_masks);
    const Grid ssim = ssim_map(x, fused, cfg.ssim);
    const ScoreMap round_score = score_from_ssim(ssim);
    for (int t = 0; t < kNumTokens; ++t) result.image_score[t] += round_score[t];
    for (std::size_t p = 0; p < ssim.size(); ++p) {
      result.mean_ssim.data()[p] += ssim.data()[p];
    }
  }

  const double total = static_cast<double>(cfg.outer_rounds) * cfg.inner_masks;
  for (int t = 0; t < kNumTokens; ++t) {
    result.image_score[t] /= cfg.outer_rounds;
    result.label_score[t] = flipped_and_masked[t] / total;
  }
  for (double& v : result.mean_ssim.data()) v /= cfg.outer_rounds;
  return result;
}

}  // namespace bdmae
