#include "patchdiff/nn/kernels.hpp"

#include <omp.h>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "patchdiff/errors.hpp"

namespace patchdiff::nn {
namespace {

int out_extent(int in, int k, ConvGeometry g) { return (in + 2 * g.pad - k) / g.stride + 1; }

bool is_pointwise(int k, ConvGeometry g) { return k == 1 && g.stride == 1 && g.pad == 0; }

// Output columns [lo, hi) whose input column ox * stride - pad + kx lies inside [0, w).
std::pair<int, int> valid_columns(int w, int wo, int kx, ConvGeometry g) {
  const int off = kx - g.pad;
  const int lo = std::clamp(off >= 0 ? 0 : (-off + g.stride - 1) / g.stride, 0, wo);
  const int hi = std::clamp(w - off <= 0 ? 0 : (w - off - 1) / g.stride + 1, lo, wo);
  return {lo, hi};
}

template <typename Real>
void im2col(const Real* x, int channels, int h, int w, int k, ConvGeometry g, int ho, int wo, Real* col) {
  const std::size_t l = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Real* dst = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * l;
        const auto [lo, hi] = valid_columns(w, wo, kx, g);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          Real* row = dst + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + wo, Real(0));
            continue;
          }
          const Real* src = x + (static_cast<std::size_t>(c) * h + iy) * w + (kx - g.pad);
          std::fill(row, row + lo, Real(0));
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, row + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) row[ox] = src[ox * g.stride];
          }
          std::fill(row + hi, row + wo, Real(0));
        }
      }
    }
  }
}

template <typename Real>
void col2im_add(const Real* col, int channels, int h, int w, int k, ConvGeometry g, int ho, int wo, Real* x) {
  const std::size_t l = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Real* src = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * l;
        const auto [lo, hi] = valid_columns(w, wo, kx, g);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= h) continue;
          Real* dst = x + (static_cast<std::size_t>(c) * h + iy) * w + (kx - g.pad);
          const Real* row = src + static_cast<std::size_t>(oy) * wo;
          if (g.stride == 1) {
            for (int ox = lo; ox < hi; ++ox) dst[ox] += row[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox * g.stride] += row[ox];
          }
        }
      }
    }
  }
}

template <typename Real>
void check_conv_args(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
  if (weight.c() != x.c() || weight.h() != weight.w()) {
    throw ShapeError("conv2d: weight " + weight.shape_string() + " incompatible with input " +
                     x.shape_string());
  }
  if (bias.size() != static_cast<std::size_t>(weight.n())) {
    throw ShapeError("conv2d: bias " + bias.shape_string() + " does not match weight " +
                     weight.shape_string());
  }
}

// Sums per-item partial results in item order so the total is thread-count independent.
template <typename Real>
void reduce_items(const std::vector<Real>& partials, std::size_t len, int items, Real* out) {
  for (int i = 0; i < items; ++i) {
    const Real* src = partials.data() + static_cast<std::size_t>(i) * len;
    for (std::size_t j = 0; j < len; ++j) out[j] += src[j];
  }
}

}  // namespace

template <typename Real>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, Real alpha, const Real* a, int lda, const Real* b, int ldb,
          Real beta, Real* c, int ldc) {
  using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;
  const CMap am(a, trans_a ? k : m, trans_a ? m : k, Eigen::OuterStride<>(lda));
  const CMap bm(b, trans_b ? n : k, trans_b ? k : n, Eigen::OuterStride<>(ldb));
  Eigen::Map<Mat, 0, Eigen::OuterStride<>> cm(c, m, n, Eigen::OuterStride<>(ldc));
  if (beta == Real(0)) {
    cm.setZero();
  } else if (beta != Real(1)) {
    cm *= beta;
  }
  if (trans_a && trans_b) cm.noalias() += alpha * am.transpose() * bm.transpose();
  else if (trans_a) cm.noalias() += alpha * am.transpose() * bm;
  else if (trans_b) cm.noalias() += alpha * am * bm.transpose();
  else cm.noalias() += alpha * am * bm;
}

template <typename Real>
Tensor<Real> conv2d_forward(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                            ConvGeometry geom) {
  check_conv_args(x, weight, bias);
  const int k = weight.h();
  const int ho = out_extent(x.h(), k, geom);
  const int wo = out_extent(x.w(), k, geom);
  const int cout = weight.n();
  const int kdim = x.c() * k * k;
  const int l = ho * wo;
  Tensor<Real> y(x.n(), cout, ho, wo);
  const bool pointwise = is_pointwise(k, geom);

#pragma omp parallel
  {
    std::vector<Real> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * l);
#pragma omp for schedule(static)
    for (int i = 0; i < x.n(); ++i) {
      const Real* src = x.item(i);
      if (!pointwise) {
        im2col(x.item(i), x.c(), x.h(), x.w(), k, geom, ho, wo, col.data());
        src = col.data();
      }
      Real* out = y.item(i);
      for (int o = 0; o < cout; ++o) std::fill(out + static_cast<std::size_t>(o) * l, out + static_cast<std::size_t>(o + 1) * l, bias.data()[o]);
      gemm<Real>(false, false, cout, l, kdim, Real(1), weight.data(), kdim, src, l, Real(1), out, l);
    }
  }
  return y;
}

template <typename Real>
void conv2d_backward(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& dy,
                     ConvGeometry geom, Tensor<Real>* dx, Tensor<Real>* dweight, Tensor<Real>* dbias) {
  const int k = weight.h();
  const int ho = dy.h();
  const int wo = dy.w();
  const int cout = weight.n();
  const int kdim = x.c() * k * k;
  const int l = ho * wo;
  const int items = x.n();
  const bool pointwise = is_pointwise(k, geom);
  const std::size_t wlen = weight.size();

  std::vector<Real> dw_parts(dweight ? wlen * items : 0);
  std::vector<Real> db_parts(dbias ? static_cast<std::size_t>(cout) * items : 0);

#pragma omp parallel
  {
    std::vector<Real> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * l);
    std::vector<Real> dcol(pointwise || !dx ? 0 : static_cast<std::size_t>(kdim) * l);
#pragma omp for schedule(static)
    for (int i = 0; i < items; ++i) {
      const Real* g = dy.item(i);
      if (dweight) {
        const Real* src = x.item(i);
        if (!pointwise) {
          im2col(x.item(i), x.c(), x.h(), x.w(), k, geom, ho, wo, col.data());
          src = col.data();
        }
        gemm<Real>(false, true, cout, kdim, l, Real(1), g, l, src, l, Real(0), dw_parts.data() + i * wlen, kdim);
      }
      if (dbias) {
        Real* db = db_parts.data() + static_cast<std::size_t>(i) * cout;
        for (int o = 0; o < cout; ++o) {
          Real s = 0;
          const Real* row = g + static_cast<std::size_t>(o) * l;
          for (int j = 0; j < l; ++j) s += row[j];
          db[o] = s;
        }
      }
      if (dx) {
        if (pointwise) {
          gemm<Real>(true, false, kdim, l, cout, Real(1), weight.data(), kdim, g, l, Real(1), dx->item(i), l);
        } else {
          gemm<Real>(true, false, kdim, l, cout, Real(1), weight.data(), kdim, g, l, Real(0), dcol.data(), l);
          col2im_add(dcol.data(), x.c(), x.h(), x.w(), k, geom, ho, wo, dx->item(i));
        }
      }
    }
  }
  if (dweight) reduce_items(dw_parts, wlen, items, dweight->data());
  if (dbias) reduce_items(db_parts, static_cast<std::size_t>(cout), items, dbias->data());
}

template <typename Real>
Tensor<Real> conv2d_forward_reference(const Tensor<Real>& x, const Tensor<Real>& weight,
                                      const Tensor<Real>& bias, ConvGeometry geom) {
  check_conv_args(x, weight, bias);
  const int k = weight.h();
  const int ho = out_extent(x.h(), k, geom);
  const int wo = out_extent(x.w(), k, geom);
  Tensor<Real> y(x.n(), weight.n(), ho, wo);
  for (int i = 0; i < x.n(); ++i)
    for (int o = 0; o < weight.n(); ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = bias.data()[o];
          for (int c = 0; c < x.c(); ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * geom.stride - geom.pad + ky;
                const int ix = ox * geom.stride - geom.pad + kx;
                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                acc += static_cast<double>(weight.at(o, c, ky, kx)) * x.at(i, c, iy, ix);
              }
          y.at(i, o, oy, ox) = static_cast<Real>(acc);
        }
  return y;
}

template <typename Real>
void conv2d_backward_reference(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& dy,
                               ConvGeometry geom, Tensor<Real>* dx, Tensor<Real>* dweight,
                               Tensor<Real>* dbias) {
  const int k = weight.h();
  for (int i = 0; i < x.n(); ++i)
    for (int o = 0; o < weight.n(); ++o)
      for (int oy = 0; oy < dy.h(); ++oy)
        for (int ox = 0; ox < dy.w(); ++ox) {
          const Real g = dy.at(i, o, oy, ox);
          if (dbias) dbias->data()[o] += g;
          for (int c = 0; c < x.c(); ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * geom.stride - geom.pad + ky;
                const int ix = ox * geom.stride - geom.pad + kx;
                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                if (dweight) dweight->at(o, c, ky, kx) += g * x.at(i, c, iy, ix);
                if (dx) dx->at(i, c, iy, ix) += g * weight.at(o, c, ky, kx);
              }
        }
}

template <typename Real>
Tensor<Real> group_norm_forward(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                                int groups, double eps, GroupNormCache<Real>& cache) {
  if (groups < 1 || x.c() % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(x.c()) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  const int cpg = x.c() / groups;
  const std::size_t plane = x.plane();
  const std::size_t span = cpg * plane;
  Tensor<Real> y = x.zeros_like();
  cache.mean.assign(static_cast<std::size_t>(x.n()) * groups, 0.0);
  cache.rstd.assign(static_cast<std::size_t>(x.n()) * groups, 0.0);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < x.n(); ++i) {
    for (int g = 0; g < groups; ++g) {
      const Real* src = x.item(i) + g * span;
      double sum = 0.0;
      for (std::size_t j = 0; j < span; ++j) sum += src[j];
      const double mean = sum / span;
      double sq = 0.0;
      for (std::size_t j = 0; j < span; ++j) {
        const double d = src[j] - mean;
        sq += d * d;
      }
      const double rstd = 1.0 / std::sqrt(sq / span + eps);
      cache.mean[i * groups + g] = mean;
      cache.rstd[i * groups + g] = rstd;
      Real* dst = y.item(i) + g * span;
      for (int cc = 0; cc < cpg; ++cc) {
        const int ch = g * cpg + cc;
        const double scale = rstd * gamma.data()[ch];
        const double shift = beta.data()[ch] - mean * scale;
        for (std::size_t j = 0; j < plane; ++j) {
          dst[cc * plane + j] = static_cast<Real>(src[cc * plane + j] * scale + shift);
        }
      }
    }
  }
  return y;
}

template <typename Real>
void group_norm_backward(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& dy,
                         int groups, const GroupNormCache<Real>& cache, Tensor<Real>* dx,
                         Tensor<Real>* dgamma, Tensor<Real>* dbeta) {
  const int cpg = x.c() / groups;
  const std::size_t plane = x.plane();
  const std::size_t span = cpg * plane;
  const int channels = x.c();
  std::vector<double> dg_parts(static_cast<std::size_t>(x.n()) * channels, 0.0);
  std::vector<double> db_parts(static_cast<std::size_t>(x.n()) * channels, 0.0);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < x.n(); ++i) {
    for (int g = 0; g < groups; ++g) {
      const double mean = cache.mean[i * groups + g];
      const double rstd = cache.rstd[i * groups + g];
      const Real* xs = x.item(i) + g * span;
      const Real* gs = dy.item(i) + g * span;
      double sum_dxhat = 0.0;
      double sum_dxhat_xhat = 0.0;
      for (int cc = 0; cc < cpg; ++cc) {
        const int ch = g * cpg + cc;
        const double gm = gamma.data()[ch];
        double dgam = 0.0, dbet = 0.0;
        for (std::size_t j = 0; j < plane; ++j) {
          const double xhat = (xs[cc * plane + j] - mean) * rstd;
          const double d = gs[cc * plane + j];
          dgam += d * xhat;
          dbet += d;
          sum_dxhat += d * gm;
          sum_dxhat_xhat += d * gm * xhat;
        }
        dg_parts[static_cast<std::size_t>(i) * channels + ch] = dgam;
        db_parts[static_cast<std::size_t>(i) * channels + ch] = dbet;
      }
      if (!dx) continue;
      Real* out = dx->item(i) + g * span;
      const double inv = 1.0 / static_cast<double>(span);
      for (int cc = 0; cc < cpg; ++cc) {
        const double gm = gamma.data()[g * cpg + cc];
        for (std::size_t j = 0; j < plane; ++j) {
          const double xhat = (xs[cc * plane + j] - mean) * rstd;
          const double dxhat = gs[cc * plane + j] * gm;
          out[cc * plane + j] += static_cast<Real>(rstd * (dxhat - sum_dxhat * inv - xhat * sum_dxhat_xhat * inv));
        }
      }
    }
  }
  for (int i = 0; i < x.n(); ++i) {
    for (int ch = 0; ch < channels; ++ch) {
      if (dgamma) dgamma->data()[ch] += static_cast<Real>(dg_parts[static_cast<std::size_t>(i) * channels + ch]);
      if (dbeta) dbeta->data()[ch] += static_cast<Real>(db_parts[static_cast<std::size_t>(i) * channels + ch]);
    }
  }
}

template <typename Real>
Tensor<Real> attention_forward(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                               Tensor<Real>& probs) {
  require_same_shape(q, k, "attention q/k");
  require_same_shape(q, v, "attention q/v");
  const int channels = q.c();
  const int l = static_cast<int>(q.plane());
  const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(channels)));
  probs = Tensor<Real>(q.n(), 1, l, l);
  Tensor<Real> out = q.zeros_like();
#pragma omp parallel for schedule(static)
  for (int i = 0; i < q.n(); ++i) {
    Real* p = probs.item(i);
    gemm<Real>(true, false, l, l, channels, scale, q.item(i), l, k.item(i), l, Real(0), p, l);
    for (int r = 0; r < l; ++r) {
      Real* row = p + static_cast<std::size_t>(r) * l;
      const Real mx = *std::max_element(row, row + l);
      double sum = 0.0;
      for (int j = 0; j < l; ++j) {
        row[j] = static_cast<Real>(std::exp(static_cast<double>(row[j] - mx)));
        sum += row[j];
      }
      const Real inv = static_cast<Real>(1.0 / sum);
      for (int j = 0; j < l; ++j) row[j] *= inv;
    }
    gemm<Real>(false, true, channels, l, l, Real(1), v.item(i), l, p, l, Real(0), out.item(i), l);
  }
  return out;
}

template <typename Real>
void attention_backward(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                        const Tensor<Real>& probs, const Tensor<Real>& dout, Tensor<Real>* dq,
                        Tensor<Real>* dk, Tensor<Real>* dv) {
  const int channels = q.c();
  const int l = static_cast<int>(q.plane());
  const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(channels)));
#pragma omp parallel
  {
    std::vector<Real> ds(static_cast<std::size_t>(l) * l);
#pragma omp for schedule(static)
    for (int i = 0; i < q.n(); ++i) {
      const Real* p = probs.item(i);
      const Real* go = dout.item(i);
      if (dv) gemm<Real>(false, false, channels, l, l, Real(1), go, l, p, l, Real(1), dv->item(i), l);
      gemm<Real>(true, false, l, l, channels, Real(1), go, l, v.item(i), l, Real(0), ds.data(), l);
      for (int r = 0; r < l; ++r) {
        Real* row = ds.data() + static_cast<std::size_t>(r) * l;
        const Real* prow = p + static_cast<std::size_t>(r) * l;
        double dot = 0.0;
        for (int j = 0; j < l; ++j) dot += static_cast<double>(row[j]) * prow[j];
        for (int j = 0; j < l; ++j) row[j] = static_cast<Real>(prow[j] * (row[j] - dot));
      }
      if (dq) gemm<Real>(false, true, channels, l, l, scale, k.item(i), l, ds.data(), l, Real(1), dq->item(i), l);
      if (dk) gemm<Real>(false, false, channels, l, l, scale, q.item(i), l, ds.data(), l, Real(1), dk->item(i), l);
    }
  }
}

template <typename Real>
Tensor<Real> attention_forward_reference(const Tensor<Real>& q, const Tensor<Real>& k,
                                         const Tensor<Real>& v) {
  const int channels = q.c();
  const int l = static_cast<int>(q.plane());
  const double scale = 1.0 / std::sqrt(static_cast<double>(channels));
  Tensor<Real> out = q.zeros_like();
  std::vector<double> logits(l);
  for (int i = 0; i < q.n(); ++i) {
    const Real* qi = q.item(i);
    const Real* ki = k.item(i);
    const Real* vi = v.item(i);
    for (int a = 0; a < l; ++a) {
      double mx = -1e300;
      for (int b = 0; b < l; ++b) {
        double s = 0.0;
        for (int c = 0; c < channels; ++c) s += static_cast<double>(qi[c * l + a]) * ki[c * l + b];
        logits[b] = s * scale;
        mx = std::max(mx, logits[b]);
      }
      double z = 0.0;
      for (int b = 0; b < l; ++b) {
        logits[b] = std::exp(logits[b] - mx);
        z += logits[b];
      }
      for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (int b = 0; b < l; ++b) acc += logits[b] / z * vi[c * l + b];
        out.item(i)[c * l + a] = static_cast<Real>(acc);
      }
    }
  }
  return out;
}

#define PATCHDIFF_INSTANTIATE_KERNELS(Real)                                                              \
  template void gemm<Real>(bool, bool, int, int, int, Real, const Real*, int, const Real*, int, Real, Real*, int); \
  template Tensor<Real> conv2d_forward(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,     \
                                       ConvGeometry);                                                     \
  template void conv2d_backward(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,            \
                                ConvGeometry, Tensor<Real>*, Tensor<Real>*, Tensor<Real>*);               \
  template Tensor<Real> conv2d_forward_reference(const Tensor<Real>&, const Tensor<Real>&,                \
                                                 const Tensor<Real>&, ConvGeometry);                      \
  template void conv2d_backward_reference(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,  \
                                          ConvGeometry, Tensor<Real>*, Tensor<Real>*, Tensor<Real>*);     \
  template Tensor<Real> group_norm_forward(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, \
                                           int, double, GroupNormCache<Real>&);                           \
  template void group_norm_backward(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, int,   \
                                    const GroupNormCache<Real>&, Tensor<Real>*, Tensor<Real>*,            \
                                    Tensor<Real>*);                                                       \
  template Tensor<Real> attention_forward(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,  \
                                          Tensor<Real>&);                                                 \
  template void attention_backward(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,         \
                                   const Tensor<Real>&, const Tensor<Real>&, Tensor<Real>*,               \
                                   Tensor<Real>*, Tensor<Real>*);                                         \
  template Tensor<Real> attention_forward_reference(const Tensor<Real>&, const Tensor<Real>&,             \
                                                    const Tensor<Real>&);

PATCHDIFF_INSTANTIATE_KERNELS(float)
PATCHDIFF_INSTANTIATE_KERNELS(double)

}  // namespace patchdiff::nn
