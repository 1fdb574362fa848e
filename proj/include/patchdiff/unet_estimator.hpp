#pragma once

#include <memory>

#include "patchdiff/estimator.hpp"
#include "patchdiff/nn/unet.hpp"

namespace patchdiff {

/// Conversions between interleaved HWC images and one item of an NCHW tensor.
template <typename Real>
void write_item(const ImageTensor& img, nn::Tensor<Real>& dst, int item, int channel_offset);
template <typename Real>
ImageTensor read_item(const nn::Tensor<Real>& src, int item);

/// Network input (N, 6, p, p) from noisy patches and their conditions.
template <typename Real>
nn::Tensor<Real> pack_input(std::span<const ImageTensor> noisy, std::span<const ImageTensor> cond);

/// NoiseEstimator backed by a U-Net. The condition is concatenated after the
/// noisy patch along channels; computation runs in `Real` and is cast back to
/// double at the boundary.
template <typename Real>
class UNetEstimator final : public NoiseEstimator {
 public:
  explicit UNetEstimator(std::shared_ptr<const nn::UNet<Real>> model);

  ImageTensor estimate(const ImageTensor& x_t, const ImageTensor& cond, int t,
                       PatchOrigin origin = {}) const override;

  const nn::UNet<Real>& model() const { return *model_; }

 private:
  std::shared_ptr<const nn::UNet<Real>> model_;
};

}  // namespace patchdiff
