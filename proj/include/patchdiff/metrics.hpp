#pragma once

#include <limits>

#include "patchdiff/image.hpp"

namespace patchdiff {

/// PSNR reported for identical inputs (zero MSE).
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

struct QualityScore {
  double psnr_db = 0.0;
  double ssim = 0.0;
};

/// BT.601 luma Y = 0.299 R + 0.587 G + 0.114 B on display-space [0, 255] RGB.
ImageTensor rgb_to_y(const ImageTensor& rgb);

/// 10 log10(peak^2 / MSE); kPsnrIdentical when MSE is zero.
double psnr(const ImageTensor& a, const ImageTensor& b, double peak = 255.0);

/// Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5) of two
/// single-channel [0, 255] images, C1 = (0.01 * 255)^2, C2 = (0.03 * 255)^2.
double ssim(const ImageTensor& a, const ImageTensor& b);

/// Model-space [-1, 1] RGB -> 8-bit quantised display space, as floats.
ImageTensor to_display(const ImageTensor& model_rgb);

/// Y-channel PSNR and SSIM between two display-space RGB images.
QualityScore score_display_rgb(const ImageTensor& restored, const ImageTensor& reference);

/// Same, quantising model-space images to 8 bits first.
QualityScore score_model_rgb(const ImageTensor& restored, const ImageTensor& reference);

}  // namespace patchdiff
