// SPDX-License-Identifier: Apache-2.0
#include "bdmae/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bdmae {

void validate_image(const Image& image) {
  if (image.height() < kTokenGrid || image.width() < kTokenGrid) {
    throw InvalidArgument("image must be at least 14x14, got " +
                          std::to_string(image.height()) + "x" +
                          std::to_string(image.width()));
  }
  for (double v : image.data()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw InvalidArgument("image pixel values must lie in [0,1]");
    }
  }
}

TokenMask TokenMask::all() {
  TokenMask m;
  m.bits_.set();
  return m;
}

TokenMask TokenMask::from_string(std::string_view bits) {
  if (bits.size() != kNumTokens) {
    throw InvalidArgument("token mask string must have 196 characters, got " +
                          std::to_string(bits.size()));
  }
  TokenMask m;
  for (int t = 0; t < kNumTokens; ++t) {
    if (bits[t] == '1') {
      m.bits_.set(t);
    } else if (bits[t] != '0') {
      throw InvalidArgument("token mask string may contain only '0' and '1'");
    }
  }
  return m;
}

std::string TokenMask::to_string() const {
  std::string s(kNumTokens, '0');
  for (int t = 0; t < kNumTokens; ++t) {
    if (bits_.test(t)) s[t] = '1';
  }
  return s;
}

double ScoreMap::sum() const {
  return std::accumulate(values_.begin(), values_.end(), 0.0);
}

double ScoreMap::max() const {
  return *std::max_element(values_.begin(), values_.end());
}

int ScoreMap::argmax() const {
  return static_cast<int>(std::max_element(values_.begin(), values_.end()) -
                          values_.begin());
}

bool ScoreMap::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

namespace {

template <typename R>
R interpolate_raster(const R& in, int height, int width) {
  if (in.empty()) throw InvalidArgument("cannot interpolate an empty raster");
  if (height < 1 || width < 1) {
    throw InvalidArgument("interpolation target must be at least 1x1");
  }
  constexpr int C = R::kChannels;
  if (in.height() == height && in.width() == width) return in;

  const int h0 = in.height();
  const int w0 = in.width();
  const double sy = height > 1 ? static_cast<double>(h0 - 1) / (height - 1) : 0.0;
  const double sx = width > 1 ? static_cast<double>(w0 - 1) / (width - 1) : 0.0;

  // Column taps are shared by every row.
  std::vector<int> x0(width), x1(width);
  std::vector<double> fx(width);
  for (int c = 0; c < width; ++c) {
    const double src = c * sx;
    x0[c] = std::min(static_cast<int>(src), w0 - 1);
    x1[c] = std::min(x0[c] + 1, w0 - 1);
    fx[c] = src - x0[c];
  }

  R out(height, width);
  for (int r = 0; r < height; ++r) {
    const double src = r * sy;
    const int y0 = std::min(static_cast<int>(src), h0 - 1);
    const int y1 = std::min(y0 + 1, h0 - 1);
    const double fy = src - y0;
    for (int c = 0; c < width; ++c) {
      for (int ch = 0; ch < C; ++ch) {
        const double top = in.at(y0, x0[c], ch) * (1.0 - fx[c]) +
                           in.at(y0, x1[c], ch) * fx[c];
        const double bottom = in.at(y1, x0[c], ch) * (1.0 - fx[c]) +
                              in.at(y1, x1[c], ch) * fx[c];
        out.at(r, c, ch) = top * (1.0 - fy) + bottom * fy;
      }
    }
  }
  return out;
}

}  // namespace

Image interpolate_image(const Image& image, int height, int width) {
  return interpolate_raster(image, height, width);
}

Grid interpolate_image(const Grid& grid, int height, int width) {
  return interpolate_raster(grid, height, width);
}

PixelMask token_mask_to_pixel_mask(const TokenMask& mask, int height, int width) {
  if (height < kTokenGrid || width < kTokenGrid) {
    throw InvalidArgument("pixel mask must be at least 14x14");
  }
  std::vector<int> col_token(width);
  for (int c = 0; c < width; ++c) {
    col_token[c] = static_cast<int>(static_cast<long long>(c) * kTokenGrid / width);
  }
  PixelMask out(height, width, 0);
  for (int r = 0; r < height; ++r) {
    const int tr = static_cast<int>(static_cast<long long>(r) * kTokenGrid / height);
    for (int c = 0; c < width; ++c) {
      out.at(r, c) = mask.test(tr, col_token[c]) ? 1 : 0;
    }
  }
  return out;
}

TokenMask sample_uniform_token_mask(Prng& prng, int masked_count) {
  if (masked_count < 0 || masked_count > kNumTokens) {
    throw InvalidArgument("masked_count must lie in [0,196], got " +
                          std::to_string(masked_count));
  }
  std::array<int, kNumTokens> order;
  std::iota(order.begin(), order.end(), 0);
  TokenMask mask;
  for (int i = 0; i < masked_count; ++i) {
    const auto j = i + static_cast<int>(prng.below(kNumTokens - i));
    std::swap(order[i], order[j]);
    mask.set(order[i]);
  }
  return mask;
}

}  // namespace bdmae
