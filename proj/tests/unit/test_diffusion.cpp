#include <doctest.h>

#include <cmath>

#include "patchdiff/diffusion.hpp"
#include "patchdiff/errors.hpp"
#include "support.hpp"

using namespace patchdiff;

namespace {

const NoiseSchedule& schedule() {
  static const NoiseSchedule s(ScheduleParams{});
  return s;
}

}  // namespace

TEST_CASE("forward_sample moments") {
  const int n = 200000;
  const double x0 = 0.6;
  for (int t : {1, 500, 1000}) {
    CAPTURE(t);
    Rng rng(static_cast<std::uint64_t>(t));
    const ImageTensor clean(n, 1, 1, x0);
    const ImageTensor eps = normal_image(n, 1, 1, rng);
    const ImageTensor xt = forward_sample(clean, t, eps, schedule());
    double s1 = 0, s2 = 0;
    for (double v : xt.values()) s1 += v;
    const double mean = s1 / n;
    for (double v : xt.values()) s2 += (v - mean) * (v - mean);
    const double var = s2 / (n - 1);
    const double mu = std::sqrt(schedule().alpha_bar(t)) * x0;
    const double sigma2 = 1.0 - schedule().alpha_bar(t);
    CHECK(std::abs(mean - mu) <= 5.0 * std::sqrt(sigma2 / n));
    CHECK(std::abs(var - sigma2) <= 5.0 * sigma2 * std::sqrt(2.0 / (n - 1)));
  }
}

TEST_CASE("posterior parameters match the clean-image form") {
  const ImageTensor x0 = test::uniform_image(6, 5, 3, 1);
  Rng rng(2);
  const ImageTensor eps = normal_image(6, 5, 3, rng);
  for (int t : {2, 10, 500, 1000}) {
    CAPTURE(t);
    const double ab = schedule().alpha_bar(t), ab_prev = schedule().alpha_bar(t - 1);
    const double beta = schedule().beta(t), alpha = schedule().alpha(t);
    const ImageTensor xt = forward_sample(x0, t, eps, schedule());
    const PosteriorParams post = posterior_params(xt, eps, t, schedule());
    for (std::size_t i = 0; i < x0.size(); ++i) {
      const double expected = std::sqrt(ab_prev) * beta / (1 - ab) * x0.values()[i] +
                              std::sqrt(alpha) * (1 - ab_prev) / (1 - ab) * xt.values()[i];
      CHECK(post.mean.values()[i] == doctest::Approx(expected).epsilon(1e-9));
    }
    CHECK(post.variance == doctest::Approx((1 - ab_prev) / (1 - ab) * beta).epsilon(1e-12));
  }
  const PosteriorParams p500 = posterior_params(x0, eps, 500, schedule());
  // 50-digit evaluation of (1 - abar_499) / (1 - abar_500) * beta_500.
  CHECK(std::abs(p500.variance - 0.010031355414613688196) <= 1e-12);
  CHECK(posterior_params(x0, eps, 1, schedule()).variance == 0.0);
}

TEST_CASE("training loss") {
  const ImageTensor x0 = test::uniform_image(8, 8, 3, 3);
  const ImageTensor cond = test::uniform_image(8, 8, 3, 4);
  Rng rng(5);
  const ImageTensor eps = normal_image(8, 8, 3, rng);
  double sq = 0;
  for (double v : eps.values()) sq += v * v;
  CHECK(training_loss(ConstantOracle(0.0), x0, cond, 300, eps, schedule()) == doctest::Approx(sq / eps.size()));
  CHECK(training_loss(ExactEpsOracle(x0, schedule()), x0, cond, 300, eps, schedule()) < 1e-20);
  double sq1 = 0;
  for (double v : eps.values()) sq1 += (v - 1.0) * (v - 1.0);
  CHECK(training_loss(ConstantOracle(1.0), x0, cond, 7, eps, schedule()) == doctest::Approx(sq1 / eps.size()));
  CHECK_THROWS_AS(training_loss(ConstantOracle(0.0), x0, test::uniform_image(4, 4, 3, 1), 7, eps, schedule()),
                  ShapeError);
}

TEST_CASE("ancestral step") {
  const ImageTensor xt = test::uniform_image(4, 4, 3, 6);
  const ImageTensor eps_hat = test::uniform_image(4, 4, 3, 7);
  const ImageTensor zero(4, 4, 3);
  const PosteriorParams post = posterior_params(xt, eps_hat, 400, schedule());
  CHECK(ancestral_step(xt, eps_hat, 400, schedule(), zero) == post.mean);
  const ImageTensor z = test::uniform_image(4, 4, 3, 8);
  const ImageTensor step = ancestral_step(xt, eps_hat, 400, schedule(), z);
  for (std::size_t i = 0; i < step.size(); ++i) {
    CHECK(step.values()[i] ==
          doctest::Approx(post.mean.values()[i] + std::sqrt(post.variance) * z.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("implicit step with exact noise lands on the forward marginal") {
  const ImageTensor x0 = test::uniform_image(5, 5, 3, 9);
  Rng rng(10);
  const ImageTensor eps = normal_image(5, 5, 3, rng);
  for (auto [t, tn] : {std::pair{1000, 900}, std::pair{501, 401}, std::pair{101, 1}, std::pair{1, 0}}) {
    CAPTURE(t);
    const ImageTensor xt = forward_sample(x0, t, eps, schedule());
    const ImageTensor next = implicit_step(xt, eps, t, tn, schedule());
    const ImageTensor expected = tn == 0 ? x0 : forward_sample(x0, tn, eps, schedule());
    CHECK(max_abs_diff(next, expected) < 1e-9);
  }
  const ImageTensor xt = forward_sample(x0, 10, eps, schedule());
  CHECK_THROWS_AS(implicit_step(xt, eps, 10, 10, schedule()), RangeError);
  CHECK_THROWS_AS(implicit_step(xt, eps, 10, -1, schedule()), RangeError);
}

TEST_CASE("chained implicit steps invert the forward process") {
  const ImageTensor x0 = test::uniform_image(16, 16, 3, 12, -0.95, 0.95);
  const TimestepSubsequence sub = make_subsequence(1000, 10);
  const ExactEpsOracle oracle(x0, schedule());
  Rng rng(13);
  ImageTensor x = forward_sample(x0, sub.tau(10), normal_image(16, 16, 3, rng), schedule());
  for (int i = 10; i >= 1; --i) x = implicit_step(x, oracle.estimate(x, x0, sub.tau(i), {}), sub.tau(i), sub.next(i), schedule());
  CHECK(max_abs_diff(x, x0) <= 1e-5);

  const ImageTensor sampled = sample_patch(oracle, x0, schedule(), sub, 99);
  CHECK(max_abs_diff(sampled, x0) <= 1e-5);
}

TEST_CASE("sample_patch is seeded, clamped and checks the schedule") {
  const ImageTensor cond = test::uniform_image(8, 8, 3, 14);
  const TimestepSubsequence sub = make_subsequence(1000, 10);
  const ConstantOracle zero(0.0);
  const ImageTensor a = sample_patch(zero, cond, schedule(), sub, 1);
  CHECK(a == sample_patch(zero, cond, schedule(), sub, 1));
  CHECK(!(a == sample_patch(zero, cond, schedule(), sub, 2)));
  for (double v : a.values()) CHECK((v >= -1.0 && v <= 1.0));
  CHECK_THROWS_AS(sample_patch(zero, cond, schedule(), make_subsequence(500, 10), 1), RangeError);
}
