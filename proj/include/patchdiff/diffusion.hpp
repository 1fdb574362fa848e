#pragma once

#include <cstdint>

#include "patchdiff/estimator.hpp"
#include "patchdiff/image.hpp"
#include "patchdiff/schedule.hpp"

namespace patchdiff {

/// Closed-form forward process: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
ImageTensor forward_sample(const ImageTensor& x0, int t, const ImageTensor& eps,
                           const NoiseSchedule& schedule);

struct PosteriorParams {
  ImageTensor mean;
  double variance = 0.0;
};

/// Mean and variance of q(x_{t-1} | x_t, x0), with x0 expressed through eps.
PosteriorParams posterior_params(const ImageTensor& x_t, const ImageTensor& eps, int t,
                                 const NoiseSchedule& schedule);

/// Simplified noise-prediction objective, reduced as the mean over all elements.
double training_loss(const NoiseEstimator& estimator, const ImageTensor& x0, const ImageTensor& cond,
                     int t, const ImageTensor& eps, const NoiseSchedule& schedule);

/// One ancestral (Langevin-like) step with sigma_t^2 = posterior variance.
/// Not used for restoration; kept for the stochastic formulation.
ImageTensor ancestral_step(const ImageTensor& x_t, const ImageTensor& eps_hat, int t,
                           const NoiseSchedule& schedule, const ImageTensor& z);

/// Clean-image prediction (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
ImageTensor predict_x0(const ImageTensor& x_t, const ImageTensor& eps_hat, int t,
                       const NoiseSchedule& schedule);

/// Deterministic implicit step from t to t_next (0 <= t_next < t).
ImageTensor implicit_step(const ImageTensor& x_t, const ImageTensor& eps_hat, int t, int t_next,
                          const NoiseSchedule& schedule);

/// Single-patch conditional sampling: x_T ~ N(0, I) drawn from `seed`, then
/// implicit steps along the reversed subsequence down to t_next = 0. The
/// result is clamped to the model range. `origin` is forwarded to the estimator.
ImageTensor sample_patch(const NoiseEstimator& estimator, const ImageTensor& cond,
                         const NoiseSchedule& schedule, const TimestepSubsequence& subsequence,
                         std::uint64_t seed, PatchOrigin origin = {});

}  // namespace patchdiff
