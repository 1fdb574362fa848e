#include "patchdiff/image.hpp"

#include <algorithm>
#include <cmath>

#include "patchdiff/errors.hpp"

namespace patchdiff {

ImageTensor::ImageTensor(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 1 || width < 1 || channels < 1) {
    throw ShapeError("image dimensions must be positive, got " + std::to_string(height) + "x" +
                     std::to_string(width) + "x" + std::to_string(channels));
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

ImageTensor ImageTensor::crop(int row, int col, int h, int w) const {
  if (row < 0 || col < 0 || row + h > height_ || col + w > width_) {
    throw ShapeError("crop window (" + std::to_string(row) + "," + std::to_string(col) + ") " +
                     std::to_string(h) + "x" + std::to_string(w) + " exceeds image " +
                     shape_string(*this));
  }
  ImageTensor out(h, w, channels_);
  const std::size_t row_len = static_cast<std::size_t>(w) * channels_;
  for (int r = 0; r < h; ++r) {
    const double* src = data_.data() + (static_cast<std::size_t>(row + r) * width_ + col) * channels_;
    std::copy(src, src + row_len, out.data_.data() + r * row_len);
  }
  return out;
}

void require_same_shape(const ImageTensor& a, const ImageTensor& b, const std::string& what) {
  if (!a.same_shape(b)) {
    throw ShapeError(what + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

std::string shape_string(const ImageTensor& img) {
  return std::to_string(img.height()) + "x" + std::to_string(img.width()) + "x" +
         std::to_string(img.channels());
}

ImageTensor concat_channels(const ImageTensor& a, const ImageTensor& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("concat_channels: spatial mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
  ImageTensor out(a.height(), a.width(), a.channels() + b.channels());
  for (int r = 0; r < a.height(); ++r) {
    for (int c = 0; c < a.width(); ++c) {
      for (int k = 0; k < a.channels(); ++k) out.at(r, c, k) = a.at(r, c, k);
      for (int k = 0; k < b.channels(); ++k) out.at(r, c, a.channels() + k) = b.at(r, c, k);
    }
  }
  return out;
}

ImageTensor clamped(const ImageTensor& img, double lo, double hi) {
  ImageTensor out = img;
  for (double& v : out.values()) v = std::clamp(v, lo, hi);
  return out;
}

double max_abs_diff(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) m = std::max(m, std::abs(av[i] - bv[i]));
  return m;
}

unsigned char to_display_byte(double model_value) {
  const double scaled = (model_value + 1.0) * 0.5 * 255.0;
  if (std::isnan(scaled)) return 0;
  const double rounded = std::floor(scaled + 0.5);
  return static_cast<unsigned char>(std::clamp(rounded, 0.0, 255.0));
}

}  // namespace patchdiff
