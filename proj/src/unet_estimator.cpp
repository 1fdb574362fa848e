#include "patchdiff/unet_estimator.hpp"

#include "patchdiff/errors.hpp"

namespace patchdiff {

template <typename Real>
void write_item(const ImageTensor& img, nn::Tensor<Real>& dst, int item, int channel_offset) {
  for (int k = 0; k < img.channels(); ++k)
    for (int r = 0; r < img.height(); ++r)
      for (int c = 0; c < img.width(); ++c) dst.at(item, channel_offset + k, r, c) = static_cast<Real>(img.at(r, c, k));
}

template <typename Real>
ImageTensor read_item(const nn::Tensor<Real>& src, int item) {
  ImageTensor out(src.h(), src.w(), src.c());
  for (int k = 0; k < src.c(); ++k)
    for (int r = 0; r < src.h(); ++r)
      for (int c = 0; c < src.w(); ++c) out.at(r, c, k) = static_cast<double>(src.at(item, k, r, c));
  return out;
}

template <typename Real>
nn::Tensor<Real> pack_input(std::span<const ImageTensor> noisy, std::span<const ImageTensor> cond) {
  if (noisy.size() != cond.size() || noisy.empty()) throw ShapeError("pack_input: batch size mismatch");
  const int h = noisy[0].height();
  const int w = noisy[0].width();
  nn::Tensor<Real> out(static_cast<int>(noisy.size()), nn::UNetConfig::kInputChannels, h, w);
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    if (noisy[i].channels() != 3 || cond[i].channels() != 3 || noisy[i].height() != h || noisy[i].width() != w) {
      throw ShapeError("pack_input: expected " + std::to_string(h) + "x" + std::to_string(w) + "x3 patches, got " +
                       shape_string(noisy[i]) + " and " + shape_string(cond[i]));
    }
    require_same_shape(noisy[i], cond[i], "pack_input condition");
    write_item(noisy[i], out, static_cast<int>(i), 0);
    write_item(cond[i], out, static_cast<int>(i), 3);
  }
  return out;
}

template <typename Real>
UNetEstimator<Real>::UNetEstimator(std::shared_ptr<const nn::UNet<Real>> model) : model_(std::move(model)) {
  if (!model_) throw Error("UNetEstimator requires initialised weights");
}

template <typename Real>
ImageTensor UNetEstimator<Real>::estimate(const ImageTensor& x_t, const ImageTensor& cond, int t,
                                          PatchOrigin) const {
  const int p = model_->config().patch_size;
  if (x_t.height() != p || x_t.width() != p) {
    throw ShapeError("unet estimator expects " + std::to_string(p) + "x" + std::to_string(p) + "x3 patches, got " +
                     shape_string(x_t));
  }
  const nn::Tensor<Real> input = pack_input<Real>(std::span(&x_t, 1), std::span(&cond, 1));
  const int timesteps[1] = {t};
  return read_item(model_->predict(input, timesteps), 0);
}

template class UNetEstimator<float>;
template class UNetEstimator<double>;
template nn::Tensor<float> pack_input(std::span<const ImageTensor>, std::span<const ImageTensor>);
template nn::Tensor<double> pack_input(std::span<const ImageTensor>, std::span<const ImageTensor>);
template void write_item(const ImageTensor&, nn::Tensor<float>&, int, int);
template void write_item(const ImageTensor&, nn::Tensor<double>&, int, int);
template ImageTensor read_item(const nn::Tensor<float>&, int);
template ImageTensor read_item(const nn::Tensor<double>&, int);

}  // namespace patchdiff
