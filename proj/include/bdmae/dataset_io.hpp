// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <stdexcept>

#include "bdmae/attacksim.hpp"

namespace bdmae {

/// Manifest readable but unusable: malformed JSON, bad fields, no items.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes every image as PPM under `dir` (clean/NNNNN.ppm, triggered/NNNNN.ppm)
/// plus dir/manifest.json:
///   {"items":[{"file":"clean/00000.ppm","label":3,"target":null}, ...]}
/// Triggered items carry their target label. Creates `dir` if needed; throws
/// IoError when it cannot be written.
void export_dataset(const std::filesystem::path& dir, const Dataset& dataset);

/// Reads a manifest written by export_dataset (or by hand). Relative file
/// paths resolve against the manifest's directory; items with a null target
/// are clean. Imported triggered images have an empty trigger mask.
/// Throws IoError for unreadable files, FormatError for bad images and
/// DataError for a bad or empty manifest.
Dataset import_dataset(const std::filesystem::path& manifest);

}  // namespace bdmae
