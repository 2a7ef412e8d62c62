// SPDX-License-Identifier: Apache-2.0
#include "bdmae/oracles.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace bdmae {

namespace {

// Quadrant colours per class: TL, TR, BL, BR. Chosen by a max-min-distance
// search over {0.25, 0.5, 0.75}^3; the first five classes are at least 1.22
// apart as 12-vectors, all ten at least 1.06.
constexpr std::array<std::array<Rgb, 4>, SyntheticWorld::kMaxClasses> kPalette{{
    {{{0.25, 0.5, 0.25}, {0.75, 0.75, 0.25}, {0.25, 0.75, 0.75}, {0.5, 0.75, 0.75}}},
    {{{0.75, 0.75, 0.75}, {0.25, 0.25, 0.75}, {0.25, 0.25, 0.25}, {0.25, 0.25, 0.25}}},
    {{{0.75, 0.75, 0.75}, {0.75, 0.75, 0.75}, {0.75, 0.25, 0.25}, {0.75, 0.75, 0.75}}},
    {{{0.75, 0.25, 0.25}, {0.25, 0.25, 0.75}, {0.75, 0.75, 0.75}, {0.25, 0.75, 0.25}}},
    {{{0.25, 0.25, 0.5}, {0.25, 0.25, 0.25}, {0.75, 0.5, 0.25}, {0.75, 0.25, 0.75}}},
    {{{0.75, 0.75, 0.75}, {0.25, 0.75, 0.25}, {0.25, 0.75, 0.25}, {0.75, 0.75, 0.25}}},
    {{{0.25, 0.75, 0.5}, {0.25, 0.75, 0.5}, {0.5, 0.25, 0.75}, {0.75, 0.25, 0.25}}},
    {{{0.75, 0.25, 0.25}, {0.5, 0.75, 0.75}, {0.25, 0.5, 0.25}, {0.75, 0.25, 0.5}}},
    {{{0.25, 0.5, 0.25}, {0.75, 0.25, 0.75}, {0.75, 0.25, 0.75}, {0.25, 0.25, 0.75}}},
    {{{0.25, 0.75, 0.5}, {0.25, 0.25, 0.75}, {0.25, 0.75, 0.25}, {0.5, 0.75, 0.75}}},
}};

double signature_distance2(const Signature& a, const Signature& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

}  // namespace

Signature quadrant_signature(const Image& image) {
  const int h = image.height();
  const int w = image.width();
  const int mid_r = h / 2;
  const int mid_c = w / 2;
  Signature sig{};
  std::array<double, 4> counts{};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int q = (r >= mid_r ? 2 : 0) + (c >= mid_c ? 1 : 0);
      counts[q] += 1.0;
      for (int ch = 0; ch < 3; ++ch) sig[q * 3 + ch] += image.at(r, c, ch);
    }
  }
  for (int q = 0; q < 4; ++q) {
    for (int ch = 0; ch < 3; ++ch) sig[q * 3 + ch] /= counts[q];
  }
  return sig;
}

// --- SyntheticWorld --------------------------------------------------------

SyntheticWorld::SyntheticWorld(int num_classes) : num_classes_(num_classes) {
  if (num_classes < 2 || num_classes > kMaxClasses) {
    throw InvalidArgument("synthetic world supports 2..10 classes, got " +
                          std::to_string(num_classes));
  }
}

const std::array<Rgb, 4>& SyntheticWorld::palette(Label label) const {
  if (label.id < 0 || label.id >= num_classes_) {
    throw InvalidArgument("label " + std::to_string(label.id) +
                          " outside the synthetic world");
  }
  return kPalette[label.id];
}

Image SyntheticWorld::base_field(Label label, int height, int width) const {
  const auto& quads = palette(label);
  Image out(height, width);
  for (int r = 0; r < height; ++r) {
    const double fy = std::clamp((r + 0.5) / height * 2.0 - 0.5, 0.0, 1.0);
    for (int c = 0; c < width; ++c) {
      const double fx = std::clamp((c + 0.5) / width * 2.0 - 0.5, 0.0, 1.0);
      for (int ch = 0; ch < 3; ++ch) {
        const double top = quads[0][ch] * (1.0 - fx) + quads[1][ch] * fx;
        const double bottom = quads[2][ch] * (1.0 - fx) + quads[3][ch] * fx;
        out.at(r, c, ch) = top * (1.0 - fy) + bottom * fy;
      }
    }
  }
  return out;
}

const std::vector<Signature>& SyntheticWorld::references(int height,
                                                         int width) const {
  std::lock_guard lock(cache_mutex_);
  auto it = cache_.find({height, width});
  if (it != cache_.end()) return it->second;
  std::vector<Signature> refs;
  for (int k = 0; k < num_classes_; ++k) {
    refs.push_back(quadrant_signature(base_field(Label{k}, height, width)));
  }
  return cache_.emplace(std::make_pair(height, width), std::move(refs))
      .first->second;
}

Label SyntheticWorld::class_rule(const Image& image) const {
  const Signature sig = quadrant_signature(image);
  const auto& refs = references(image.height(), image.width());
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < num_classes_; ++k) {
    const double d = signature_distance2(sig, refs[k]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return Label{best};
}

double SyntheticWorld::bucket_margin(int height, int width) const {
  const auto& refs = references(height, width);
  double min_d2 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < num_classes_; ++a) {
    for (int b = a + 1; b < num_classes_; ++b) {
      min_d2 = std::min(min_d2, signature_distance2(refs[a], refs[b]));
    }
  }
  return 0.5 * std::sqrt(min_d2);
}

// --- classifiers -----------------------------------------------------------

SyntheticCleanClassifier::SyntheticCleanClassifier(
    std::shared_ptr<const SyntheticWorld> world)
    : world_(std::move(world)) {}

int SyntheticCleanClassifier::num_classes() const { return world_->num_classes(); }

Label SyntheticCleanClassifier::classify(const Image& image) const {
  return world_->class_rule(image);
}

SyntheticBackdooredClassifier::SyntheticBackdooredClassifier(
    std::shared_ptr<const SyntheticWorld> world, TriggerSpec trigger,
    Label target)
    : world_(std::move(world)), trigger_(std::move(trigger)), target_(target) {
  trigger_.validate();
  if (target_.id < 0 || target_.id >= world_->num_classes()) {
    throw InvalidArgument("backdoor target outside the synthetic world");
  }
}

int SyntheticBackdooredClassifier::num_classes() const {
  return world_->num_classes();
}

const SyntheticBackdooredClassifier::Template&
SyntheticBackdooredClassifier::template_for(int height, int width) const {
  std::lock_guard lock(cache_mutex_);
  auto& slot = cache_[{height, width}];
  if (slot) return *slot;
  slot = std::make_unique<Template>();
  try {
    const TriggerStamp stamp = rasterize_trigger(trigger_, height, width);
    slot->fits = stamp.mask_count > 0;
    slot->pinned = stamp.pinned;
    slot->height = stamp.mask.height();
    slot->width = stamp.mask.width();
    for (int r = 0; r < slot->height; ++r) {
      for (int c = 0; c < slot->width; ++c) {
        if (!stamp.mask.at(r, c)) continue;
        slot->pixels.emplace_back(r, c);
        slot->colors.push_back(
            {stamp.content.at(r, c, 0), stamp.content.at(r, c, 1),
             stamp.content.at(r, c, 2)});
      }
    }
    slot->required = static_cast<int>(
        std::ceil(kMatchFraction * static_cast<double>(slot->pixels.size()) - 1e-9));
  } catch (const InvalidArgument&) {
    slot->fits = false;
  }
  return *slot;
}

bool SyntheticBackdooredClassifier::trigger_present(const Image& image) const {
  const Template& tpl = template_for(image.height(), image.width());
  if (!tpl.fits) return false;
  const int n = static_cast<int>(tpl.pixels.size());
  const int allowed_misses = n - tpl.required;
  for (int dr = 0; dr + tpl.height <= image.height(); ++dr) {
    for (int dc = 0; dc + tpl.width <= image.width(); ++dc) {
      int misses = 0;
      for (int i = 0; i < n && misses <= allowed_misses; ++i) {
        const auto [r, c] = tpl.pixels[i];
        const Rgb& want = tpl.colors[i];
        for (int ch = 0; ch < 3; ++ch) {
          if (std::abs(image.at(dr + r, dc + c, ch) - want[ch]) > kPixelTolerance) {
            ++misses;
            break;
          }
        }
      }
      if (misses <= allowed_misses) return true;
    }
  }
  return false;
}

Label SyntheticBackdooredClassifier::classify(const Image& image) const {
  return trigger_present(image) ? target_ : world_->class_rule(image);
}

// --- restorers -------------------------------------------------------------

void validate_restoration(const Image& restored) {
  if (restored.height() != kRestorerSize || restored.width() != kRestorerSize) {
    throw ProtocolError("restorer must return a 224x224 image");
  }
  for (double v : restored.data()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw ProtocolError("restorer returned pixels outside [0,1]");
    }
  }
}

Image EchoRestorer::restore(const Image& image224, const TokenMask&) const {
  return image224;
}

}  // namespace bdmae
