#include "patchdiff/diffusion.hpp"

#include <cmath>
#include <string>

#include "patchdiff/errors.hpp"
#include "patchdiff/rng.hpp"

namespace patchdiff {
namespace {

void check_t(int t, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.timesteps()) {
    throw RangeError("timestep " + std::to_string(t) + " outside [1, " +
                     std::to_string(schedule.timesteps()) + "]");
  }
}

}  // namespace

ImageTensor forward_sample(const ImageTensor& x0, int t, const ImageTensor& eps,
                           const NoiseSchedule& schedule) {
  require_same_shape(x0, eps, "forward_sample");
  check_t(t, schedule);
  const double signal = std::sqrt(schedule.alpha_bar(t));
  const double noise = std::sqrt(1.0 - schedule.alpha_bar(t));
  ImageTensor out(x0.height(), x0.width(), x0.channels());
  auto xv = x0.values();
  auto ev = eps.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = signal * xv[i] + noise * ev[i];
  return out;
}

PosteriorParams posterior_params(const ImageTensor& x_t, const ImageTensor& eps, int t,
                                 const NoiseSchedule& schedule) {
  require_same_shape(x_t, eps, "posterior_params");
  check_t(t, schedule);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(t));
  const double eps_coef = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
  PosteriorParams out{ImageTensor(x_t.height(), x_t.width(), x_t.channels()), 0.0};
  auto xv = x_t.values();
  auto ev = eps.values();
  auto mv = out.mean.values();
  for (std::size_t i = 0; i < mv.size(); ++i) mv[i] = inv_sqrt_alpha * (xv[i] - eps_coef * ev[i]);
  out.variance = (1.0 - schedule.alpha_bar(t - 1)) / (1.0 - schedule.alpha_bar(t)) * schedule.beta(t);
  return out;
}

double training_loss(const NoiseEstimator& estimator, const ImageTensor& x0, const ImageTensor& cond,
                     int t, const ImageTensor& eps, const NoiseSchedule& schedule) {
  require_same_shape(x0, eps, "training_loss");
  if (cond.height() != x0.height() || cond.width() != x0.width()) {
    throw ShapeError("training_loss: condition " + shape_string(cond) + " does not match " +
                     shape_string(x0));
  }
  const ImageTensor x_t = forward_sample(x0, t, eps, schedule);
  const ImageTensor eps_hat = estimator.estimate(x_t, cond, t);
  require_same_shape(eps_hat, eps, "training_loss estimator output");
  auto ev = eps.values();
  auto hv = eps_hat.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < ev.size(); ++i) {
    const double d = ev[i] - hv[i];
    sum += d * d;
  }
  return sum / static_cast<double>(ev.size());
}

ImageTensor ancestral_step(const ImageTensor& x_t, const ImageTensor& eps_hat, int t,
                           const NoiseSchedule& schedule, const ImageTensor& z) {
  require_same_shape(x_t, z, "ancestral_step noise");
  PosteriorParams post = posterior_params(x_t, eps_hat, t, schedule);
  const double sigma = std::sqrt(post.variance);
  auto mv = post.mean.values();
  auto zv = z.values();
  for (std::size_t i = 0; i < mv.size(); ++i) mv[i] += sigma * zv[i];
  return std::move(post.mean);
}

ImageTensor predict_x0(const ImageTensor& x_t, const ImageTensor& eps_hat, int t,
                       const NoiseSchedule& schedule) {
  require_same_shape(x_t, eps_hat, "predict_x0");
  check_t(t, schedule);
  const double signal = std::sqrt(schedule.alpha_bar(t));
  const double noise = std::sqrt(1.0 - schedule.alpha_bar(t));
  ImageTensor out(x_t.height(), x_t.width(), x_t.channels());
  auto xv = x_t.values();
  auto ev = eps_hat.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = (xv[i] - noise * ev[i]) / signal;
  return out;
}

ImageTensor implicit_step(const ImageTensor& x_t, const ImageTensor& eps_hat, int t, int t_next,
                          const NoiseSchedule& schedule) {
  check_t(t, schedule);
  if (t_next < 0 || t_next >= t) {
    throw RangeError("implicit_step requires 0 <= t_next < t, got t=" + std::to_string(t) +
                     " t_next=" + std::to_string(t_next));
  }
  ImageTensor out = predict_x0(x_t, eps_hat, t, schedule);
  const double signal_next = std::sqrt(schedule.alpha_bar(t_next));
  const double noise_next = std::sqrt(1.0 - schedule.alpha_bar(t_next));
  auto ov = out.values();
  auto ev = eps_hat.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = signal_next * ov[i] + noise_next * ev[i];
  return out;
}

ImageTensor sample_patch(const NoiseEstimator& estimator, const ImageTensor& cond,
                         const NoiseSchedule& schedule, const TimestepSubsequence& subsequence,
                         std::uint64_t seed, PatchOrigin origin) {
  if (subsequence.timesteps() != schedule.timesteps()) {
    throw RangeError("subsequence built for T=" + std::to_string(subsequence.timesteps()) +
                     " but schedule has T=" + std::to_string(schedule.timesteps()));
  }
  Rng rng(seed);
  ImageTensor x = normal_image(cond.height(), cond.width(), 3, rng);
  for (int i = subsequence.steps(); i >= 1; --i) {
    const int t = subsequence.tau(i);
    const ImageTensor eps_hat = estimator.estimate(x, cond, t, origin);
    x = implicit_step(x, eps_hat, t, subsequence.next(i), schedule);
  }
  return clamped(x);
}

}  // namespace patchdiff
