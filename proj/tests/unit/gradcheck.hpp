#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "patchdiff/diffusion.hpp"
#include "patchdiff/nn/unet.hpp"
#include "patchdiff/unet_estimator.hpp"
#include "support.hpp"

namespace test {

struct GroupError {
  std::string name;
  double relative_error;
};

struct GradientReport {
  double analytic_loss = 0;
  double reference_loss = 0;
  std::vector<GroupError> groups;
};

// Central differences of the single-sample training loss against the
// backpropagated gradient, one relative error per parameter tensor. Some
// groups have an identically zero gradient (a key bias shifts every attention
// logit of a query equally), so the denominator is floored against the
// overall gradient scale.
inline GradientReport unet_gradient_check(const patchdiff::nn::UNetConfig& cfg, std::uint64_t seed) {
  using namespace patchdiff;
  const int p = cfg.patch_size;
  auto model = std::make_shared<nn::UNet<double>>(cfg, seed);
  Rng rng(seed + 1);
  // The output layer starts at zero, which would hide every upstream gradient.
  for (auto& prm : model->parameters())
    for (double& v : prm.value.values()) v += 0.3 * rng.normal();

  const NoiseSchedule schedule(ScheduleParams{});
  const ImageTensor x0 = uniform_image(p, p, 3, seed + 2);
  const ImageTensor cond = uniform_image(p, p, 3, seed + 3);
  const ImageTensor eps = normal_image(p, p, 3, rng);
  const int t = 321;
  const UNetEstimator<double> estimator(model);
  auto loss = [&] { return training_loss(estimator, x0, cond, t, eps, schedule); };

  const std::vector<ImageTensor> noisy{forward_sample(x0, t, eps, schedule)}, conds{cond};
  const nn::Tensor<double> input = pack_input<double>(noisy, conds);
  nn::Tensor<double> target(1, 3, p, p);
  write_item(eps, target, 0, 0);
  std::vector<nn::Tensor<double>> grads;
  GradientReport report;
  report.analytic_loss = model->loss_and_gradients(input, std::span<const int>(&t, 1), target, nullptr, grads);
  report.reference_loss = loss();

  double global2 = 0;
  for (const auto& g : grads)
    for (double v : g.values()) global2 += v * v;
  const double floor = 1e-7 * std::sqrt(global2);

  auto& params = model->parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t i = 0; i < params[k].value.size(); ++i) {
      double& v = params[k].value.data()[i];
      const double saved = v, h = 1e-5;
      v = saved + h;
      const double lp = loss();
      v = saved - h;
      const double lm = loss();
      v = saved;
      const double numeric = (lp - lm) / (2 * h);
      const double a = grads[k].data()[i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    report.groups.push_back({params[k].name, std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), floor})});
  }
  return report;
}

}  // namespace test
