// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "bdmae/core.hpp"

namespace bdmae {

/// Gaussian-window SSIM parameters. The defaults are the usual ones for
/// images with dynamic range 1: an 11x11 window with sigma 1.5,
/// c1 = (0.01)^2 and c2 = (0.03)^2.
struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double c1 = 1e-4;
  double c2 = 9e-4;

  void validate() const;
  /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
  std::vector<double> kernel() const;
};

/// Per-pixel SSIM averaged over the RGB channels. Local statistics use the
/// Gaussian window with reflect padding (edge sample not repeated). Output
/// values lie in [-1, 1].
Grid ssim_map(const Image& x, const Image& y, const SsimConfig& cfg = {});

/// 1 - SSIM resampled to the token grid. Values lie in [0, 2].
ScoreMap image_score(const Image& x, const Image& restored,
                     const SsimConfig& cfg = {});

/// 1 - interpolate(ssim, 14, 14) for an already computed SSIM map.
ScoreMap score_from_ssim(const Grid& ssim);

/// Reflect-101 index into [0, n): -1 -> 1, n -> n - 2.
int reflect_index(int i, int n);

}  // namespace bdmae
