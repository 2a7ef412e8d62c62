// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <utility>
#include <vector>

#include "bdmae/core.hpp"
#include "bdmae/trigger.hpp"

namespace bdmae {

/// Failure of a classifier or restorer oracle.
class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OracleTimeout : public OracleError {
 public:
  using OracleError::OracleError;
};

/// Malformed or contract-violating oracle response.
class ProtocolError : public OracleError {
 public:
  using OracleError::OracleError;
};

/// Black-box hard-label classifier. Implementations must be deterministic and
/// safe to call from several threads.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual int num_classes() const = 0;
  virtual Label classify(const Image& image) const = 0;
};

/// Masked-image restorer on the 224x224 restorer grid. Pixels outside the
/// mask may be altered; callers composite them away.
class Restorer {
 public:
  virtual ~Restorer() = default;
  virtual Image restore(const Image& image224, const TokenMask& mask) const = 0;
};

/// Quadrant colour signature: mean RGB of the four image quadrants, ordered
/// top-left, top-right, bottom-left, bottom-right.
using Signature = std::array<double, 12>;

Signature quadrant_signature(const Image& image);

/// Desk-scale stand-in for a trained model's world. Each class owns four
/// quadrant colours; a clean image of class k is a smooth bilinear blend of
/// those colours between the quadrant centres (plus content added by the
/// corpus generator). The class rule assigns the class whose base field has
/// the nearest quadrant signature.
class SyntheticWorld {
 public:
  static constexpr int kMaxClasses = 10;

  explicit SyntheticWorld(int num_classes = 5);

  int num_classes() const { return num_classes_; }
  const std::array<Rgb, 4>& palette(Label label) const;

  /// The noise-free colour field of a class.
  Image base_field(Label label, int height, int width) const;

  Label class_rule(const Image& image) const;
  /// Half the smallest distance between two class signatures at this size:
  /// any signature shift below it keeps the label.
  double bucket_margin(int height, int width) const;

 private:
  const std::vector<Signature>& references(int height, int width) const;

  int num_classes_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::pair<int, int>, std::vector<Signature>> cache_;
};

/// Trigger-agnostic classifier: applies the world's class rule.
class SyntheticCleanClassifier : public Classifier {
 public:
  explicit SyntheticCleanClassifier(std::shared_ptr<const SyntheticWorld> world);
  int num_classes() const override;
  Label classify(const Image& image) const override;

 private:
  std::shared_ptr<const SyntheticWorld> world_;
};

/// Backdoored classifier: returns `target` whenever the trigger is present
/// anywhere in the image, where present means at least 90% of the trigger
/// pixels match within 0.02 on every channel at some offset. Otherwise
/// falls back to the clean rule.
class SyntheticBackdooredClassifier : public Classifier {
 public:
  static constexpr double kPixelTolerance = 0.02;
  static constexpr double kMatchFraction = 0.9;

  SyntheticBackdooredClassifier(std::shared_ptr<const SyntheticWorld> world,
                                TriggerSpec trigger, Label target);
  int num_classes() const override;
  Label classify(const Image& image) const override;

  bool trigger_present(const Image& image) const;

 private:
  struct Template {
    bool fits = false;
    bool pinned = false;
    int height = 0;
    int width = 0;
    int required = 0;
    std::vector<std::pair<int, int>> pixels;  // (row, col) inside the box
    std::vector<Rgb> colors;
  };
  const Template& template_for(int height, int width) const;

  std::shared_ptr<const SyntheticWorld> world_;
  TriggerSpec trigger_;
  Label target_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::pair<int, int>, std::unique_ptr<Template>> cache_;
};

/// Harmonic inpainting: masked pixels solve the discrete Laplace equation
/// (each pixel the mean of its in-image 4-neighbours) with the unmasked pixels
/// as Dirichlet boundary. Unmasked pixels are returned unchanged.
///
/// The solve runs coarse to fine over the token-aligned pyramid
/// 14 -> 28 -> 56 -> 112 -> 224, each level seeded by bilinear prolongation of
/// the one below. Above the token grid, Jacobi relaxation is accelerated by
/// multigrid V-cycles (damped Jacobi smoothing). A level stops once an update
/// moves no pixel by `tol` or more, or after `max_iters` updates. Restored
/// values stay within the range of the boundary values up to that tolerance.
/// An all-masked input has no boundary and comes back as constant 0.5.
class LaplaceInpaintRestorer : public Restorer {
 public:
  explicit LaplaceInpaintRestorer(int max_iters = 500, double tol = 1e-4);
  Image restore(const Image& image224, const TokenMask& mask) const override;

  int max_iters() const { return max_iters_; }
  double tol() const { return tol_; }

 private:
  int max_iters_;
  double tol_;
};

/// Returns its input unchanged.
class EchoRestorer : public Restorer {
 public:
  Image restore(const Image& image224, const TokenMask& mask) const override;
};

/// Pass-through decorators that count oracle calls.
class CountingClassifier : public Classifier {
 public:
  explicit CountingClassifier(const Classifier& inner) : inner_(inner) {}
  int num_classes() const override { return inner_.num_classes(); }
  Label classify(const Image& image) const override {
    ++calls_;
    return inner_.classify(image);
  }
  long calls() const { return calls_.load(); }

 private:
  const Classifier& inner_;
  mutable std::atomic<long> calls_{0};
};

class CountingRestorer : public Restorer {
 public:
  explicit CountingRestorer(const Restorer& inner) : inner_(inner) {}
  Image restore(const Image& image224, const TokenMask& mask) const override {
    ++calls_;
    return inner_.restore(image224, mask);
  }
  long calls() const { return calls_.load(); }

 private:
  const Restorer& inner_;
  mutable std::atomic<long> calls_{0};
};

/// Checks a restorer's output against the Restorer contract; throws
/// ProtocolError on violation.
void validate_restoration(const Image& restored);

}  // namespace bdmae
