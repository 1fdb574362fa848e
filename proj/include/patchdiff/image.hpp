#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace patchdiff {

/// Dense H x W x C image stored interleaved (row-major, channels last).
///
/// Images live in model space [-1, 1]; noise tensors share the type and are
/// unbounded. Conversion to and from 8-bit display values is done by
/// `to_model_value` / `to_display_byte`.
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, int channels, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int row, int col, int ch) {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + ch];
  }
  double at(int row, int col, int ch) const {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + ch];
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  /// Copies the h x w window whose top-left pixel is (row, col).
  ImageTensor crop(int row, int col, int h, int w) const;

  bool same_shape(const ImageTensor& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  bool operator==(const ImageTensor& other) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

/// Throws ShapeError naming `what` if the shapes differ.
void require_same_shape(const ImageTensor& a, const ImageTensor& b, const std::string& what);

std::string shape_string(const ImageTensor& img);

ImageTensor concat_channels(const ImageTensor& a, const ImageTensor& b);

/// Elementwise clamp into [lo, hi].
ImageTensor clamped(const ImageTensor& img, double lo = -1.0, double hi = 1.0);

double max_abs_diff(const ImageTensor& a, const ImageTensor& b);

/// 8-bit value -> model space: 0 -> -1, 255 -> +1.
inline double to_model_value(int byte) { return 2.0 * byte / 255.0 - 1.0; }

/// Model space -> 8-bit with round-half-up and clamping to [0, 255].
unsigned char to_display_byte(double model_value);

}  // namespace patchdiff
