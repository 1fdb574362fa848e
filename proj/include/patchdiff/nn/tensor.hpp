#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace patchdiff::nn {

/// 4-D tensor in NCHW layout. Vectors and matrices use trailing unit dims.
template <typename Real>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, Real fill = Real(0))
      : n_(n), c_(c), h_(h), w_(w), data_(static_cast<std::size_t>(n) * c * h * w, fill) {}

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return data_.size(); }
  /// Elements per batch item.
  std::size_t item_size() const { return static_cast<std::size_t>(c_) * h_ * w_; }
  std::size_t plane() const { return static_cast<std::size_t>(h_) * w_; }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  Real* item(int i) { return data_.data() + i * item_size(); }
  const Real* item(int i) const { return data_.data() + i * item_size(); }
  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }

  Real& at(int i, int ch, int y, int x) { return data_[((static_cast<std::size_t>(i) * c_ + ch) * h_ + y) * w_ + x]; }
  Real at(int i, int ch, int y, int x) const {
    return data_[((static_cast<std::size_t>(i) * c_ + ch) * h_ + y) * w_ + x];
  }

  bool same_shape(const Tensor& o) const { return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }
  bool operator==(const Tensor&) const = default;
  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }
  Tensor zeros_like() const { return Tensor(n_, c_, h_, w_); }

  std::string shape_string() const;

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<Real> data_;
};

template <typename Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* what);

}  // namespace patchdiff::nn
