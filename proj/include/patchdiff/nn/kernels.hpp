#pragma once

#include "patchdiff/nn/tensor.hpp"

// Compute kernels for the U-Net. The default kernels parallelise over the batch
// with OpenMP and run their inner products through Eigen GEMM; each has a serial
// direct-loop `*_reference` twin used by tests and benchmarks. Results of the
// default kernels never depend on the OpenMP thread count: per-item work is
// independent and cross-item reductions happen in item order.

namespace patchdiff::nn {

/// Row-major C = alpha * op(A) * op(B) + beta * C.
template <typename Real>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, Real alpha, const Real* a, int lda,
          const Real* b, int ldb, Real beta, Real* c, int ldc);

struct ConvGeometry {
  int stride = 1;
  int pad = 0;
};

/// weight: (out, in, k, k); bias: (1, out, 1, 1).
template <typename Real>
Tensor<Real> conv2d_forward(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                            ConvGeometry geom);

/// Accumulates into dx, dweight, dbias (any may be null).
template <typename Real>
void conv2d_backward(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& dy,
                     ConvGeometry geom, Tensor<Real>* dx, Tensor<Real>* dweight, Tensor<Real>* dbias);

template <typename Real>
Tensor<Real> conv2d_forward_reference(const Tensor<Real>& x, const Tensor<Real>& weight,
                                      const Tensor<Real>& bias, ConvGeometry geom);

template <typename Real>
void conv2d_backward_reference(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& dy,
                               ConvGeometry geom, Tensor<Real>* dx, Tensor<Real>* dweight,
                               Tensor<Real>* dbias);

/// Per-item, per-group statistics saved by the forward pass.
template <typename Real>
struct GroupNormCache {
  std::vector<double> mean;
  std::vector<double> rstd;
};

template <typename Real>
Tensor<Real> group_norm_forward(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                                int groups, double eps, GroupNormCache<Real>& cache);

template <typename Real>
void group_norm_backward(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& dy,
                         int groups, const GroupNormCache<Real>& cache, Tensor<Real>* dx,
                         Tensor<Real>* dgamma, Tensor<Real>* dbeta);

/// Single-head spatial self-attention on (N, C, H, W) projections.
/// probs receives the (N, 1, L, L) softmax matrix, L = H * W.
template <typename Real>
Tensor<Real> attention_forward(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                               Tensor<Real>& probs);

template <typename Real>
void attention_backward(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                        const Tensor<Real>& probs, const Tensor<Real>& dout, Tensor<Real>* dq,
                        Tensor<Real>* dk, Tensor<Real>* dv);

template <typename Real>
Tensor<Real> attention_forward_reference(const Tensor<Real>& q, const Tensor<Real>& k,
                                         const Tensor<Real>& v);

}  // namespace patchdiff::nn
