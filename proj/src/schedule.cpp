#include "patchdiff/schedule.hpp"

#include <string>

#include "patchdiff/errors.hpp"

namespace patchdiff {

NoiseSchedule::NoiseSchedule(int timesteps, double beta_start, double beta_end)
    : params_{timesteps, beta_start, beta_end} {
  if (timesteps < 1) {
    throw RangeError("schedule needs at least one timestep, got " + std::to_string(timesteps));
  }
  if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0)) {
    throw RangeError("schedule requires 0 < beta_start < beta_end < 1, got beta_start=" +
                     std::to_string(beta_start) + " beta_end=" + std::to_string(beta_end));
  }
  betas_.resize(timesteps);
  alphas_.resize(timesteps);
  alpha_bars_.resize(timesteps);
  double running = 1.0;
  for (int i = 0; i < timesteps; ++i) {
    const double frac = timesteps == 1 ? 0.0 : static_cast<double>(i) / (timesteps - 1);
    betas_[i] = beta_start + (beta_end - beta_start) * frac;
    alphas_[i] = 1.0 - betas_[i];
    running *= alphas_[i];
    alpha_bars_[i] = running;
  }
}

void NoiseSchedule::check_timestep(int t, int lowest) const {
  if (t < lowest || t > timesteps()) {
    throw RangeError("timestep " + std::to_string(t) + " outside [" + std::to_string(lowest) + ", " +
                     std::to_string(timesteps()) + "]");
  }
}

double NoiseSchedule::beta(int t) const {
  check_timestep(t, 1);
  return betas_[t - 1];
}

double NoiseSchedule::alpha(int t) const {
  check_timestep(t, 1);
  return alphas_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  check_timestep(t, 0);
  return t == 0 ? 1.0 : alpha_bars_[t - 1];
}

NoiseSchedule make_linear_schedule(int timesteps, double beta_start, double beta_end) {
  return NoiseSchedule(timesteps, beta_start, beta_end);
}

TimestepSubsequence::TimestepSubsequence(int timesteps, int steps) : timesteps_(timesteps) {
  if (steps < 1 || steps > timesteps) {
    throw RangeError("sampling steps must lie in [1, " + std::to_string(timesteps) + "], got " +
                     std::to_string(steps));
  }
  if (timesteps % steps != 0) {
    throw RangeError("sampling steps " + std::to_string(steps) + " must divide T=" +
                     std::to_string(timesteps));
  }
  const int stride = timesteps / steps;
  taus_.resize(steps);
  for (int i = 0; i < steps; ++i) taus_[i] = i * stride + 1;
}

TimestepSubsequence make_subsequence(int timesteps, int steps) {
  return TimestepSubsequence(timesteps, steps);
}

}  // namespace patchdiff
