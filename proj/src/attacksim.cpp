// SPDX-License-Identifier: Apache-2.0
#include "bdmae/attacksim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace bdmae {

std::pair<Image, PixelMask> apply_trigger(const Image& x, const TriggerSpec& spec,
                                          Prng& prng) {
  const TriggerStamp stamp = rasterize_trigger(spec, x.height(), x.width());
  const int bh = stamp.mask.height();
  const int bw = stamp.mask.width();
  int row0 = 0;
  int col0 = 0;
  if (!stamp.pinned) {
    if (spec.placement.random) {
      row0 = static_cast<int>(prng.below(x.height() - bh + 1));
      col0 = static_cast<int>(prng.below(x.width() - bw + 1));
    } else {
      row0 = spec.placement.row;
      col0 = spec.placement.col;
      if (row0 < 0 || col0 < 0 || row0 + bh > x.height() || col0 + bw > x.width()) {
        throw InvalidArgument("trigger placed outside the image");
      }
    }
  }

  std::pair<Image, PixelMask> out{x, PixelMask(x.height(), x.width(), 0)};
  for (int r = 0; r < bh; ++r) {
    for (int c = 0; c < bw; ++c) {
      if (!stamp.mask.at(r, c)) continue;
      out.second.at(row0 + r, col0 + c) = 1;
      for (int ch = 0; ch < 3; ++ch) {
        out.first.at(row0 + r, col0 + c, ch) = stamp.content.at(r, c, ch);
      }
    }
  }
  return out;
}

Image render_clean_image(const SyntheticWorld& world, Label label, int image_size,
                         Prng& prng) {
  const double pi = std::acos(-1.0);
  const double scale = image_size / 64.0;
  constexpr int kMaxAttempts = 16;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Image img = world.base_field(label, image_size, image_size);

    // Two low-frequency waves per channel, |noise| <= 0.04.
    struct Wave { double amp, fy, fx, phase; };
    std::array<std::array<Wave, 2>, 3> waves;
    for (auto& channel : waves) {
      for (auto& w : channel) {
        w = {0.02 * prng.uniform(), 0.5 + 1.5 * prng.uniform(),
             0.5 + 1.5 * prng.uniform(), 2.0 * pi * prng.uniform()};
      }
    }
    for (int r = 0; r < image_size; ++r) {
      for (int c = 0; c < image_size; ++c) {
        const double y = static_cast<double>(r) / image_size;
        const double x = static_cast<double>(c) / image_size;
        for (int ch = 0; ch < 3; ++ch) {
          double n = 0.0;
          for (const Wave& w : waves[ch]) {
            n += w.amp * std::sin(2.0 * pi * (w.fy * y + w.fx * x) + w.phase);
          }
          img.at(r, c, ch) += n;
        }
      }
    }

    // Soft-edged discs tinted away from the local background.
    const int shapes = 1 + static_cast<int>(prng.below(2));
    for (int s = 0; s < shapes; ++s) {
      const double radius = (3.0 + 3.0 * prng.uniform()) * scale;
      const double cy = radius + prng.uniform() * (image_size - 2 * radius);
      const double cx = radius + prng.uniform() * (image_size - 2 * radius);
      Rgb tint;
      for (double& t : tint) t = 0.4 * prng.uniform() - 0.2;
      for (int r = 0; r < image_size; ++r) {
        for (int c = 0; c < image_size; ++c) {
          const double d = std::hypot(r + 0.5 - cy, c + 0.5 - cx);
          const double alpha = std::clamp(radius + 0.5 - d, 0.0, 1.0);
          if (alpha <= 0.0) continue;
          for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) += alpha * tint[ch];
        }
      }
    }
    for (double& v : img.data()) v = std::clamp(v, 0.05, 0.95);
    if (world.class_rule(img) == label) return img;
  }
  throw std::logic_error("could not render a clean image honouring the class rule");
}

Dataset generate_corpus(const SyntheticWorld& world, std::span<const TriggerSpec> specs,
                        const CorpusOptions& options, const Prng& prng) {
  if (options.n_per_class < 1) throw InvalidArgument("n_per_class must be >= 1");
  if (options.image_size < kTokenGrid) throw InvalidArgument("image_size must be >= 14");
  for (const auto& spec : specs) {
    // Surfaces oversize triggers before any image is rendered.
    rasterize_trigger(spec, options.image_size, options.image_size);
    if (spec.target.id >= world.num_classes()) {
      throw InvalidArgument("trigger target outside the synthetic world");
    }
  }

  Dataset data;
  std::size_t index = 0;
  for (int k = 0; k < world.num_classes(); ++k) {
    for (int i = 0; i < options.n_per_class; ++i, ++index) {
      Prng stream = prng.fork(index);
      LabeledImage item{render_clean_image(world, Label{k}, options.image_size, stream),
                        Label{k}};
      if (!specs.empty()) {
        const TriggerSpec& spec = specs[index % specs.size()];
        auto [triggered, mask] = apply_trigger(item.image, spec, stream);
        data.triggered.push_back(
            {std::move(triggered), item.label, spec.target, std::move(mask)});
      }
      data.clean.push_back(std::move(item));
    }
  }
  return data;
}

std::vector<Label> predict_all(const DefenseFn& defense, const Dataset& dataset,
                               int jobs) {
  const std::size_t total = dataset.size();
  std::vector<Label> predictions(total);
  auto image_at = [&](std::size_t i) -> const Image& {
    return i < dataset.clean.size() ? dataset.clean[i].image
                                    : dataset.triggered[i - dataset.clean.size()].image;
  };

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < total; i = next++) {
      try {
        predictions[i] = defense(image_at(i), i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = total;
      }
    }
  };
  const int threads = std::clamp<int>(jobs, 1, static_cast<int>(std::max<std::size_t>(total, 1)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return predictions;
}

Metrics metrics_from_predictions(const Dataset& dataset,
                                 std::span<const Label> predictions) {
  if (dataset.clean.empty() || dataset.triggered.empty()) {
    throw InvalidArgument("evaluation needs non-empty clean and triggered splits");
  }
  if (predictions.size() != dataset.size()) {
    throw InvalidArgument("one prediction per dataset image required");
  }
  Metrics m;
  m.n_clean = dataset.clean.size();
  m.n_triggered = dataset.triggered.size();
  std::size_t clean_ok = 0, triggered_ok = 0, hits = 0;
  for (std::size_t i = 0; i < m.n_clean; ++i) {
    if (predictions[i] == dataset.clean[i].label) ++clean_ok;
  }
  for (std::size_t j = 0; j < m.n_triggered; ++j) {
    const auto& item = dataset.triggered[j];
    const Label p = predictions[m.n_clean + j];
    if (p == item.label) ++triggered_ok;
    if (item.label != item.target) {
      ++m.n_asr;
      if (p == item.target) ++hits;
    }
  }
  m.acc_c = static_cast<double>(clean_ok) / m.n_clean;
  m.acc_b = static_cast<double>(triggered_ok) / m.n_triggered;
  m.asr = m.n_asr > 0 ? static_cast<double>(hits) / m.n_asr : 0.0;
  return m;
}

Metrics evaluate(const DefenseFn& defense, const Dataset& dataset, int jobs) {
  if (dataset.clean.empty() || dataset.triggered.empty()) {
    throw InvalidArgument("evaluation needs non-empty clean and triggered splits");
  }
  const auto predictions = predict_all(defense, dataset, jobs);
  return metrics_from_predictions(dataset, predictions);
}

}  // namespace bdmae
