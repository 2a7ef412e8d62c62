// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string_view>

#include "bdmae/core.hpp"

namespace bdmae {

/// File missing, unreadable or unwritable.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File readable but not in the expected format.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary PPM (P6). maxval 1..65535 is accepted; samples are scaled to [0,1].
Image read_ppm(const std::filesystem::path& path);

/// Binary PPM (P6), maxval 255, samples round(p * 255) clamped to [0, 255].
void write_ppm(const std::filesystem::path& path, const Image& image);

/// 16-bit binary PGM (P5), maxval 65535, samples round(clamp(v, 0, 1) * 65535),
/// big-endian as the format requires.
void write_pgm16(const std::filesystem::path& path, const Grid& grid);

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace bdmae
