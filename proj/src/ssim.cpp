// SPDX-License-Identifier: Apache-2.0
#include "bdmae/ssim.hpp"

#include <algorithm>
#include <cmath>

namespace bdmae {

void SsimConfig::validate() const {
  if (window < 1 || window % 2 == 0) {
    throw InvalidArgument("SSIM window must be a positive odd size");
  }
  if (!(sigma > 0.0)) throw InvalidArgument("SSIM sigma must be positive");
  if (!(c1 > 0.0) || !(c2 > 0.0)) {
    throw InvalidArgument("SSIM constants c1 and c2 must be positive");
  }
}

std::vector<double> SsimConfig::kernel() const {
  std::vector<double> taps(window);
  const int radius = window / 2;
  double total = 0.0;
  for (int i = 0; i < window; ++i) {
    const double d = i - radius;
    taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

namespace {

// Separable Gaussian filter of a single plane with reflect padding.
std::vector<double> blur(const std::vector<double>& plane, int h, int w,
                         const std::vector<double>& taps) {
  const int radius = static_cast<int>(taps.size()) / 2;
  const int window = static_cast<int>(taps.size());

  // Horizontal pass over a reflect-padded copy of each row.
  std::vector<int> col_index(w + 2 * radius);
  for (int i = 0; i < w + 2 * radius; ++i) col_index[i] = reflect_index(i - radius, w);
  std::vector<double> padded(w + 2 * radius);
  std::vector<double> tmp(plane.size(), 0.0);
  for (int r = 0; r < h; ++r) {
    const double* src = plane.data() + static_cast<std::size_t>(r) * w;
    for (int i = 0; i < w + 2 * radius; ++i) padded[i] = src[col_index[i]];
    double* dst = tmp.data() + static_cast<std::size_t>(r) * w;
    for (int k = 0; k < window; ++k) {
      const double t = taps[k];
      const double* in = padded.data() + k;
      for (int c = 0; c < w; ++c) dst[c] += t * in[c];
    }
  }

  // Vertical pass, accumulating whole rows.
  std::vector<double> out(plane.size(), 0.0);
  for (int r = 0; r < h; ++r) {
    double* dst = out.data() + static_cast<std::size_t>(r) * w;
    for (int k = 0; k < window; ++k) {
      const double t = taps[k];
      const double* in = tmp.data() + static_cast<std::size_t>(reflect_index(r + k - radius, h)) * w;
      for (int c = 0; c < w; ++c) dst[c] += t * in[c];
    }
  }
  return out;
}

}  // namespace

Grid ssim_map(const Image& x, const Image& y, const SsimConfig& cfg) {
  cfg.validate();
  if (x.empty() || !x.same_shape(y)) {
    throw InvalidArgument("ssim_map requires two images of identical size");
  }
  const int h = x.height();
  const int w = x.width();
  const std::size_t n = x.pixel_count();
  const auto taps = cfg.kernel();

  Grid out(h, w, 0.0);
  std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
  for (int ch = 0; ch < Image::kChannels; ++ch) {
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = x.data()[i * 3 + ch];
      b[i] = y.data()[i * 3 + ch];
      aa[i] = a[i] * a[i];
      bb[i] = b[i] * b[i];
      ab[i] = a[i] * b[i];
    }
    const auto mu_a = blur(a, h, w, taps);
    const auto mu_b = blur(b, h, w, taps);
    const auto e_aa = blur(aa, h, w, taps);
    const auto e_bb = blur(bb, h, w, taps);
    const auto e_ab = blur(ab, h, w, taps);
    for (std::size_t i = 0; i < n; ++i) {
      const double mab = mu_a[i] * mu_b[i];
      const double maa = mu_a[i] * mu_a[i];
      const double mbb = mu_b[i] * mu_b[i];
      const double var_a = e_aa[i] - maa;
      const double var_b = e_bb[i] - mbb;
      const double cov = e_ab[i] - mab;
      const double num = (2.0 * mab + cfg.c1) * (2.0 * cov + cfg.c2);
      const double den = (maa + mbb + cfg.c1) * (var_a + var_b + cfg.c2);
      out.data()[i] += std::clamp(num / den, -1.0, 1.0);
    }
  }
  for (double& v : out.data()) v /= Image::kChannels;
  return out;
}

ScoreMap score_from_ssim(const Grid& ssim) {
  const Grid coarse = interpolate_image(ssim, kTokenGrid, kTokenGrid);
  ScoreMap s;
  for (int t = 0; t < kNumTokens; ++t) s[t] = 1.0 - coarse.data()[t];
  return s;
}

ScoreMap image_score(const Image& x, const Image& restored,
                     const SsimConfig& cfg) {
  return score_from_ssim(ssim_map(x, restored, cfg));
}

}  // namespace bdmae
