// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <bitset>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bdmae/prng.hpp"

namespace bdmae {

/// Side of the square token grid. Every restorer, mask and score map in the
/// engine lives on this grid.
inline constexpr int kTokenGrid = 14;
inline constexpr int kNumTokens = kTokenGrid * kTokenGrid;

/// Side of the square image the restorer operates on.
inline constexpr int kRestorerSize = 224;

/// Default number of masked tokens per random restoration mask (75% of 196).
inline constexpr int kDefaultMaskedCount = 147;

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by fusion when some pixel is covered by no restoration mask.
class CoverageViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major raster with `Channels` interleaved samples per pixel.
template <typename T, int Channels>
class Raster {
 public:
  static constexpr int kChannels = Channels;
  using value_type = T;

  Raster() = default;
  Raster(int height, int width, T fill = T{})
      : height_(height), width_(width) {
    if (height < 1 || width < 1) {
      throw InvalidArgument("raster dimensions must be positive, got " +
                            std::to_string(height) + "x" +
                            std::to_string(width));
    }
    data_.assign(static_cast<std::size_t>(height) * width * Channels, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height_) * width_;
  }

  T& at(int row, int col, int channel = 0) {
    return data_[index(row, col, channel)];
  }
  const T& at(int row, int col, int channel = 0) const {
    return data_[index(row, col, channel)];
  }

  std::size_t index(int row, int col, int channel = 0) const {
    return (static_cast<std::size_t>(row) * width_ + col) * Channels + channel;
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(const Raster& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

/// RGB image, pixel values in [0,1].
using Image = Raster<double, 3>;
/// Single-channel real grid (SSIM maps, interpolation of scalar fields).
using Grid = Raster<double, 1>;
/// Binary pixel mask; 1 marks a pixel taken from a restoration.
using PixelMask = Raster<std::uint8_t, 1>;

/// Throws InvalidArgument unless the image is a valid engine input:
/// at least 14x14 and every sample finite and within [0,1].
void validate_image(const Image& image);

struct Label {
  int id = 0;
  friend auto operator<=>(const Label&, const Label&) = default;
};

/// 14x14 binary token grid; bit (row * 14 + col) set means the token is masked.
class TokenMask {
 public:
  TokenMask() = default;

  static TokenMask all();
  /// Parses a 196-character string of '0'/'1' in row-major order.
  static TokenMask from_string(std::string_view bits);

  bool test(int token) const { return bits_.test(token); }
  bool test(int row, int col) const { return bits_.test(row * kTokenGrid + col); }
  void set(int token, bool value = true) { bits_.set(token, value); }
  void set(int row, int col, bool value = true) {
    bits_.set(row * kTokenGrid + col, value);
  }

  int count() const { return static_cast<int>(bits_.count()); }
  bool none() const { return bits_.none(); }
  /// True when every set token of this mask is also set in `other`.
  bool subset_of(const TokenMask& other) const {
    return (bits_ & ~other.bits_).none();
  }

  std::string to_string() const;

  TokenMask operator|(const TokenMask& o) const { return TokenMask(bits_ | o.bits_); }
  TokenMask operator&(const TokenMask& o) const { return TokenMask(bits_ & o.bits_); }
  /// Set difference.
  TokenMask operator-(const TokenMask& o) const { return TokenMask(bits_ & ~o.bits_); }
  friend bool operator==(const TokenMask&, const TokenMask&) = default;

 private:
  explicit TokenMask(std::bitset<kNumTokens> bits) : bits_(bits) {}
  std::bitset<kNumTokens> bits_;
};

/// Per-token real-valued trigger-region score.
class ScoreMap {
 public:
  ScoreMap() { values_.fill(0.0); }
  explicit ScoreMap(double fill) { values_.fill(fill); }

  double& operator[](int token) { return values_[token]; }
  double operator[](int token) const { return values_[token]; }
  double& at(int row, int col) { return values_[row * kTokenGrid + col]; }
  double at(int row, int col) const { return values_[row * kTokenGrid + col]; }

  double sum() const;
  double max() const;
  /// Row-major index of the largest value; lowest index wins ties.
  int argmax() const;
  bool all_finite() const;

  const std::array<double, kNumTokens>& values() const { return values_; }
  std::array<double, kNumTokens>& values() { return values_; }

  friend bool operator==(const ScoreMap&, const ScoreMap&) = default;

 private:
  std::array<double, kNumTokens> values_;
};

/// Bilinear resampling with corner-aligned sample positions: output corners
/// coincide with input corners. Works on any channel count.
Image interpolate_image(const Image& image, int height, int width);
Grid interpolate_image(const Grid& grid, int height, int width);

/// Nearest-neighbour upsampling of a token mask: pixel (r, c) takes token
/// (floor(r * 14 / H), floor(c * 14 / W)).
PixelMask token_mask_to_pixel_mask(const TokenMask& mask, int height, int width);

/// Uniformly random subset of `masked_count` tokens (partial Fisher-Yates).
TokenMask sample_uniform_token_mask(Prng& prng,
                                    int masked_count = kDefaultMaskedCount);

}  // namespace bdmae
