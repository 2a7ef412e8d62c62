// SPDX-License-Identifier: Apache-2.0
#include "bdmae/trigger.hpp"

#include <algorithm>
#include <cmath>

namespace bdmae {

std::string to_string(TriggerPattern pattern) {
  switch (pattern) {
    case TriggerPattern::kSolidPatch: return "solid-patch";
    case TriggerPattern::kCheckerboard: return "checkerboard";
    case TriggerPattern::kRandomCurve: return "random-curve";
    case TriggerPattern::kDistributedCheckerboards: return "distributed-checkerboards";
  }
  return "unknown";
}

TriggerPattern trigger_pattern_from_string(const std::string& name) {
  if (name == "solid-patch") return TriggerPattern::kSolidPatch;
  if (name == "checkerboard") return TriggerPattern::kCheckerboard;
  if (name == "random-curve") return TriggerPattern::kRandomCurve;
  if (name == "distributed-checkerboards") {
    return TriggerPattern::kDistributedCheckerboards;
  }
  throw InvalidArgument("unknown trigger pattern '" + name + "'");
}

void TriggerSpec::validate() const {
  if (size < 0) throw InvalidArgument("trigger size must be non-negative");
  if (thickness < 1) throw InvalidArgument("curve thickness must be >= 1");
  if (cell < 1) throw InvalidArgument("checkerboard cell must be >= 1");
  for (double v : color) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("trigger color outside [0,1]");
  }
  for (double v : color2) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("trigger color outside [0,1]");
  }
  if (target.id < 0) throw InvalidArgument("trigger target label must be >= 0");
}

int token_equivalent_size(double tokens, int image_side) {
  return static_cast<int>(std::lround(tokens * image_side / kTokenGrid));
}

namespace {

void paint(TriggerStamp& stamp, int r, int c, const Rgb& color) {
  if (!stamp.mask.at(r, c)) ++stamp.mask_count;
  stamp.mask.at(r, c) = 1;
  for (int ch = 0; ch < 3; ++ch) stamp.content.at(r, c, ch) = color[ch];
}

void paint_checkerboard(TriggerStamp& stamp, const TriggerSpec& spec, int r0,
                        int c0) {
  for (int r = 0; r < spec.size; ++r) {
    for (int c = 0; c < spec.size; ++c) {
      const bool first = ((r / spec.cell) + (c / spec.cell)) % 2 == 0;
      paint(stamp, r0 + r, c0 + c, first ? spec.color : spec.color2);
    }
  }
}

// Random-walk polyline inside a size x size box, stroked with a square brush.
void paint_curve(TriggerStamp& stamp, const TriggerSpec& spec) {
  Prng prng(spec.curve_seed);
  const int n = spec.size;
  const int half = spec.thickness / 2;
  auto stroke = [&](double y, double x) {
    const int cy = static_cast<int>(std::lround(y));
    const int cx = static_cast<int>(std::lround(x));
    for (int dy = -half; dy < spec.thickness - half; ++dy) {
      for (int dx = -half; dx < spec.thickness - half; ++dx) {
        const int r = std::clamp(cy + dy, 0, n - 1);
        const int c = std::clamp(cx + dx, 0, n - 1);
        paint(stamp, r, c, spec.color);
      }
    }
  };
  double y = prng.uniform() * (n - 1);
  double x = prng.uniform() * (n - 1);
  constexpr int kSegments = 4;
  const double pi = std::acos(-1.0);
  double heading = prng.uniform() * 2.0 * pi;
  for (int s = 0; s < kSegments; ++s) {
    heading += (prng.uniform() - 0.5) * pi;
    const double length = (0.4 + 0.4 * prng.uniform()) * n;
    const double ny = std::clamp(y + std::sin(heading) * length, 0.0, n - 1.0);
    const double nx = std::clamp(x + std::cos(heading) * length, 0.0, n - 1.0);
    const int steps = std::max(1, static_cast<int>(std::ceil(
                                      std::max(std::abs(ny - y), std::abs(nx - x)) * 2)));
    for (int k = 0; k <= steps; ++k) {
      const double f = static_cast<double>(k) / steps;
      stroke(y + (ny - y) * f, x + (nx - x) * f);
    }
    y = ny;
    x = nx;
  }
}

}  // namespace

TriggerStamp rasterize_trigger(const TriggerSpec& spec, int image_height,
                               int image_width) {
  spec.validate();
  TriggerStamp stamp;
  if (spec.pattern == TriggerPattern::kDistributedCheckerboards) {
    constexpr int kMargin = 1;
    if (spec.size > 0 && 2 * (spec.size + kMargin) > std::min(image_height, image_width)) {
      throw InvalidArgument("distributed checkerboards do not fit in a " +
                            std::to_string(image_height) + "x" +
                            std::to_string(image_width) + " image");
    }
    stamp.content = Image(image_height, image_width, 0.0);
    stamp.mask = PixelMask(image_height, image_width, 0);
    stamp.pinned = true;
    if (spec.size == 0) return stamp;
    const int far_r = image_height - kMargin - spec.size;
    const int far_c = image_width - kMargin - spec.size;
    for (int r0 : {kMargin, far_r}) {
      for (int c0 : {kMargin, far_c}) paint_checkerboard(stamp, spec, r0, c0);
    }
    return stamp;
  }

  const int side = std::max(spec.size, 1);
  if (spec.size > image_height || spec.size > image_width) {
    throw InvalidArgument("trigger of size " + std::to_string(spec.size) +
                          " does not fit in a " + std::to_string(image_height) +
                          "x" + std::to_string(image_width) + " image");
  }
  stamp.content = Image(side, side, 0.0);
  stamp.mask = PixelMask(side, side, 0);
  if (spec.size == 0) return stamp;

  switch (spec.pattern) {
    case TriggerPattern::kSolidPatch:
      for (int r = 0; r < side; ++r) {
        for (int c = 0; c < side; ++c) paint(stamp, r, c, spec.color);
      }
      break;
    case TriggerPattern::kCheckerboard:
      paint_checkerboard(stamp, spec, 0, 0);
      break;
    case TriggerPattern::kRandomCurve:
      paint_curve(stamp, spec);
      break;
    case TriggerPattern::kDistributedCheckerboards:
      break;
  }
  return stamp;
}

}  // namespace bdmae
