#include "patchdiff/metrics.hpp"

#include <array>
#include <cmath>

#include "patchdiff/errors.hpp"

namespace patchdiff {
namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> taps{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    taps[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += taps[i];
  }
  for (double& v : taps) v /= sum;
  return taps;
}

// 'Valid' separable Gaussian filtering of a single-channel image.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w) {
  static const std::array<double, kWindow> taps = gaussian_taps();
  const int oh = h - kWindow + 1;
  const int ow = w - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += taps[k] * img[static_cast<std::size_t>(r) * w + c + k];
      rows[static_cast<std::size_t>(r) * ow + c] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += taps[k] * rows[static_cast<std::size_t>(r + k) * ow + c];
      out[static_cast<std::size_t>(r) * ow + c] = s;
    }
  return out;
}

void require_single_channel(const ImageTensor& img, const char* what) {
  if (img.channels() != 1) {
    throw ShapeError(std::string(what) + " expects a single-channel image, got " + shape_string(img));
  }
}

}  // namespace

ImageTensor rgb_to_y(const ImageTensor& rgb) {
  if (rgb.channels() != 3) throw ShapeError("rgb_to_y expects 3 channels, got " + shape_string(rgb));
  ImageTensor y(rgb.height(), rgb.width(), 1);
  for (int r = 0; r < rgb.height(); ++r)
    for (int c = 0; c < rgb.width(); ++c)
      y.at(r, c, 0) = 0.299 * rgb.at(r, c, 0) + 0.587 * rgb.at(r, c, 1) + 0.114 * rgb.at(r, c, 2);
  return y;
}

double psnr(const ImageTensor& a, const ImageTensor& b, double peak) {
  require_same_shape(a, b, "psnr");
  auto av = a.values();
  auto bv = b.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(av.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a, b, "ssim");
  require_single_channel(a, "ssim");
  if (a.height() < kWindow || a.width() < kWindow) {
    throw ShapeError("ssim needs images of at least 11x11, got " + shape_string(a));
  }
  constexpr double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  constexpr double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  const int h = a.height();
  const int w = a.width();
  const std::vector<double> x(a.values().begin(), a.values().end());
  const std::vector<double> y(b.values().begin(), b.values().end());
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mu_x = filter_valid(x, h, w);
  const auto mu_y = filter_valid(y, h, w);
  const auto e_xx = filter_valid(xx, h, w);
  const auto e_yy = filter_valid(yy, h, w);
  const auto e_xy = filter_valid(xy, h, w);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_x.size(); ++i) {
    const double mx = mu_x[i], my = mu_y[i];
    const double vx = e_xx[i] - mx * mx;
    const double vy = e_yy[i] - my * my;
    const double cov = e_xy[i] - mx * my;
    total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mu_x.size());
}

ImageTensor to_display(const ImageTensor& model_rgb) {
  ImageTensor out(model_rgb.height(), model_rgb.width(), model_rgb.channels());
  auto src = model_rgb.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = to_display_byte(src[i]);
  return out;
}

QualityScore score_display_rgb(const ImageTensor& restored, const ImageTensor& reference) {
  const ImageTensor ya = rgb_to_y(restored);
  const ImageTensor yb = rgb_to_y(reference);
  return QualityScore{psnr(ya, yb), ssim(ya, yb)};
}

QualityScore score_model_rgb(const ImageTensor& restored, const ImageTensor& reference) {
  return score_display_rgb(to_display(restored), to_display(reference));
}

}  // namespace patchdiff
