#include "patchdiff/estimator.hpp"

#include <cmath>

namespace patchdiff {

ImageTensor ConstantOracle::estimate(const ImageTensor& x_t, const ImageTensor&, int,
                                     PatchOrigin) const {
  return ImageTensor(x_t.height(), x_t.width(), x_t.channels(), value_);
}

ImageTensor PositionalOracle::estimate(const ImageTensor& x_t, const ImageTensor&, int,
                                       PatchOrigin origin) const {
  ImageTensor out(x_t.height(), x_t.width(), x_t.channels());
  for (int r = 0; r < x_t.height(); ++r) {
    for (int c = 0; c < x_t.width(); ++c) {
      const double v = field_(origin.row + r, origin.col + c);
      for (int k = 0; k < x_t.channels(); ++k) out.at(r, c, k) = v;
    }
  }
  return out;
}

ImageTensor ExactEpsOracle::estimate(const ImageTensor& x_t, const ImageTensor&, int t,
                                     PatchOrigin origin) const {
  const ImageTensor x0 = x0_.crop(origin.row, origin.col, x_t.height(), x_t.width());
  require_same_shape(x_t, x0, "ExactEpsOracle");
  const double signal = std::sqrt(schedule_.alpha_bar(t));
  const double noise = std::sqrt(1.0 - schedule_.alpha_bar(t));
  ImageTensor out(x_t.height(), x_t.width(), x_t.channels());
  auto xv = x_t.values();
  auto cv = x0.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = (xv[i] - signal * cv[i]) / noise;
  return out;
}

}  // namespace patchdiff
