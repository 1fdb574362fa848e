#pragma once

#include <functional>
#include <memory>

#include "patchdiff/image.hpp"
#include "patchdiff/schedule.hpp"

namespace patchdiff {

/// Top-left pixel of the patch being evaluated, in whole-image coordinates.
struct PatchOrigin {
  int row = 0;
  int col = 0;
};

/// Conditional noise estimator eps(x_t, cond, t).
///
/// Implementations must be pure: identical inputs give identical outputs and
/// `estimate` never mutates model state, so concurrent calls are safe. The
/// output has the shape of `x_t`. `origin` is informational; learned models
/// ignore it, test oracles may use it.
class NoiseEstimator {
 public:
  virtual ~NoiseEstimator() = default;
  virtual ImageTensor estimate(const ImageTensor& x_t, const ImageTensor& cond, int t,
                               PatchOrigin origin = {}) const = 0;
};

/// Returns `value` everywhere.
class ConstantOracle final : public NoiseEstimator {
 public:
  explicit ConstantOracle(double value) : value_(value) {}
  ImageTensor estimate(const ImageTensor& x_t, const ImageTensor& cond, int t,
                       PatchOrigin origin) const override;

 private:
  double value_;
};

/// Returns f(row, col) evaluated at each pixel's absolute image coordinate.
class PositionalOracle final : public NoiseEstimator {
 public:
  using Field = std::function<double(int row, int col)>;
  explicit PositionalOracle(Field f) : field_(std::move(f)) {}
  ImageTensor estimate(const ImageTensor& x_t, const ImageTensor& cond, int t,
                       PatchOrigin origin) const override;

 private:
  Field field_;
};

/// Algebraically exact noise for a known clean image:
/// eps = (x_t - sqrt(abar_t) x0) / sqrt(1 - abar_t), with x0 cropped at the patch origin.
class ExactEpsOracle final : public NoiseEstimator {
 public:
  ExactEpsOracle(ImageTensor x0, const NoiseSchedule& schedule) : x0_(std::move(x0)), schedule_(schedule) {}
  ImageTensor estimate(const ImageTensor& x_t, const ImageTensor& cond, int t,
                       PatchOrigin origin) const override;

 private:
  ImageTensor x0_;
  NoiseSchedule schedule_;
};

/// Adapts an arbitrary callable; used for composed and patch-local test estimators.
class FunctionEstimator final : public NoiseEstimator {
 public:
  using Fn = std::function<ImageTensor(const ImageTensor&, const ImageTensor&, int, PatchOrigin)>;
  explicit FunctionEstimator(Fn fn) : fn_(std::move(fn)) {}
  ImageTensor estimate(const ImageTensor& x_t, const ImageTensor& cond, int t,
                       PatchOrigin origin) const override {
    return fn_(x_t, cond, t, origin);
  }

 private:
  Fn fn_;
};

}  // namespace patchdiff
