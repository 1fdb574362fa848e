#pragma once

#include <span>
#include <vector>

namespace patchdiff {

/// Parameters that fully determine a linear variance schedule.
struct ScheduleParams {
  int timesteps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  bool operator==(const ScheduleParams&) const = default;
};

/// Fixed, linearly increasing variance schedule over timesteps 1..T.
///
/// All queries take 1-based timesteps. `alpha_bar(0)` is defined as 1 so the
/// last implicit sampling step (t_next = 0) returns the clean prediction.
/// Immutable after construction.
class NoiseSchedule {
 public:
  NoiseSchedule(int timesteps, double beta_start, double beta_end);
  explicit NoiseSchedule(const ScheduleParams& params)
      : NoiseSchedule(params.timesteps, params.beta_start, params.beta_end) {}

  int timesteps() const { return static_cast<int>(betas_.size()); }
  ScheduleParams params() const { return params_; }

  double beta(int t) const;
  double alpha(int t) const;
  /// Cumulative product of alphas up to t; t = 0 gives 1.
  double alpha_bar(int t) const;

  std::span<const double> betas() const { return betas_; }
  std::span<const double> alphas() const { return alphas_; }
  std::span<const double> alpha_bars() const { return alpha_bars_; }

 private:
  void check_timestep(int t, int lowest) const;

  ScheduleParams params_;
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

NoiseSchedule make_linear_schedule(int timesteps, double beta_start, double beta_end);

/// Uniformly interleaved timesteps tau_i = (i - 1) * T / S + 1, i = 1..S.
class TimestepSubsequence {
 public:
  TimestepSubsequence(int timesteps, int steps);

  int steps() const { return static_cast<int>(taus_.size()); }
  int timesteps() const { return timesteps_; }
  /// tau_i for 1-based i.
  int tau(int i) const { return taus_.at(static_cast<std::size_t>(i - 1)); }
  /// Timestep following tau_i on the reverse path; 0 after tau_1.
  int next(int i) const { return i > 1 ? tau(i - 1) : 0; }
  std::span<const int> taus() const { return taus_; }

 private:
  int timesteps_;
  std::vector<int> taus_;
};

TimestepSubsequence make_subsequence(int timesteps, int steps);

}  // namespace patchdiff
