// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>

#include "bdmae/core.hpp"

namespace bdmae {

using Rgb = std::array<double, 3>;

enum class TriggerPattern {
  kSolidPatch,
  kCheckerboard,
  kRandomCurve,
  kDistributedCheckerboards,
};

std::string to_string(TriggerPattern pattern);
TriggerPattern trigger_pattern_from_string(const std::string& name);

struct Placement {
  bool random = false;
  int row = 0;
  int col = 0;
};

/// Description of a local-patch backdoor trigger.
///
/// `size` is the side of the square patch (solid, checkerboard), the side of
/// each corner patch (distributed checkerboards) or the side of the bounding
/// box the curve is drawn in (random curve). A size of 0 is the empty
/// trigger.
struct TriggerSpec {
  TriggerPattern pattern = TriggerPattern::kSolidPatch;
  int size = 9;
  int thickness = 1;  // curve stroke width
  int cell = 1;       // checkerboard cell side
  Rgb color{1.0, 0.0, 1.0};
  Rgb color2{0.0, 0.0, 0.0};
  Placement placement{};
  Label target{0};
  std::uint64_t curve_seed = 0;

  void validate() const;
};

/// Pixel side of a trigger covering `tokens` x `tokens` cells of the 14x14
/// token grid on an image of side `image_side`.
int token_equivalent_size(double tokens, int image_side);

/// The trigger content theta and its mask m over the trigger's bounding box.
struct TriggerStamp {
  Image content;
  PixelMask mask;
  int mask_count = 0;
  /// Fixed offset of the bounding box when the geometry pins it (the
  /// distributed checkerboards span the whole image).
  bool pinned = false;
};

/// Rasterizes the trigger for an image of the given size. Throws
/// InvalidArgument when the trigger does not fit.
TriggerStamp rasterize_trigger(const TriggerSpec& spec, int image_height,
                               int image_width);

}  // namespace bdmae
