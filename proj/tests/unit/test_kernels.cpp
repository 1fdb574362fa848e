#include <doctest.h>

#include <cmath>
#include <functional>

#include "patchdiff/nn/graph.hpp"
#include "patchdiff/nn/kernels.hpp"
#include "patchdiff/rng.hpp"

using namespace patchdiff;
using namespace patchdiff::nn;

namespace {

template <typename Real>
Tensor<Real> random_tensor(int n, int c, int h, int w, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor<Real> t(n, c, h, w);
  for (Real& v : t.values()) v = static_cast<Real>(scale * rng.normal());
  return t;
}

template <typename Real>
double max_diff(const Tensor<Real>& a, const Tensor<Real>& b) {
  REQUIRE(a.same_shape(b));
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a.data()[i]) - double(b.data()[i])));
  return m;
}

struct ConvCase {
  int n, cin, cout, h, w, k;
  ConvGeometry geom;
};

const ConvCase kConvCases[] = {
    {3, 4, 5, 8, 8, 3, {1, 1}}, {2, 3, 6, 9, 7, 3, {2, 1}}, {2, 6, 4, 5, 5, 1, {1, 0}},
    {1, 2, 3, 6, 6, 3, {1, 0}}, {2, 4, 4, 8, 8, 3, {2, 1}},
};

template <typename Real>
void compare_conv(double tol) {
  std::uint64_t seed = 1;
  for (const ConvCase& c : kConvCases) {
    CAPTURE(c.k);
    CAPTURE(c.geom.stride);
    const auto x = random_tensor<Real>(c.n, c.cin, c.h, c.w, seed++);
    const auto wt = random_tensor<Real>(c.cout, c.cin, c.k, c.k, seed++);
    const auto b = random_tensor<Real>(1, c.cout, 1, 1, seed++);
    const auto y = conv2d_forward(x, wt, b, c.geom);
    const auto y_ref = conv2d_forward_reference(x, wt, b, c.geom);
    CHECK(max_diff(y, y_ref) < tol);

    const auto dy = random_tensor<Real>(y.n(), y.c(), y.h(), y.w(), seed++);
    auto dx = x.zeros_like(), dw = wt.zeros_like(), db = b.zeros_like();
    auto dx_r = x.zeros_like(), dw_r = wt.zeros_like(), db_r = b.zeros_like();
    conv2d_backward(x, wt, dy, c.geom, &dx, &dw, &db);
    conv2d_backward_reference(x, wt, dy, c.geom, &dx_r, &dw_r, &db_r);
    CHECK(max_diff(dx, dx_r) < tol);
    CHECK(max_diff(dw, dw_r) < tol);
    CHECK(max_diff(db, db_r) < tol);
  }
}

// Finite-difference check of a graph op through an MSE head.
using Build = std::function<int(Graph<double>&, const std::vector<int>&)>;

void gradient_check(std::vector<Tensor<double>> inputs, const Build& build) {
  Tensor<double> target;
  {
    Graph<double> g(false);
    std::vector<int> ids;
    for (auto& t : inputs) ids.push_back(g.parameter(t));
    const auto& out = g.value(build(g, ids));
    target = random_tensor<double>(out.n(), out.c(), out.h(), out.w(), 777);
  }
  auto loss = [&] {
    Graph<double> g(false);
    std::vector<int> ids;
    for (auto& t : inputs) ids.push_back(g.parameter(t));
    return g.value(mse(g, build(g, ids), target)).data()[0];
  };
  Graph<double> g(true);
  std::vector<int> ids;
  for (auto& t : inputs) ids.push_back(g.parameter(t));
  const int root = mse(g, build(g, ids), target);
  g.backward(root);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    CAPTURE(k);
    const Tensor<double> analytic = g.grad(ids[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      double& v = inputs[k].data()[i];
      const double saved = v;
      const double h = 1e-5;
      v = saved + h;
      const double lp = loss();
      v = saved - h;
      const double lm = loss();
      v = saved;
      const double numeric = (lp - lm) / (2 * h);
      CHECK(std::abs(analytic.data()[i] - numeric) <= 1e-7 + 1e-5 * std::abs(numeric));
    }
  }
}

}  // namespace

TEST_CASE("gemm matches a direct product for all transpose combinations") {
  const int m = 5, n = 7, k = 4;
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      const auto a = random_tensor<double>(1, 1, ta ? k : m, ta ? m : k, 1);
      const auto b = random_tensor<double>(1, 1, tb ? n : k, tb ? k : n, 2);
      auto c = random_tensor<double>(1, 1, m, n, 3);
      const auto c0 = c;
      gemm<double>(ta, tb, m, n, k, 0.5, a.data(), ta ? m : k, b.data(), tb ? k : n, 2.0, c.data(), n);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double s = 0;
          for (int p = 0; p < k; ++p) s += (ta ? a.at(0, 0, p, i) : a.at(0, 0, i, p)) * (tb ? b.at(0, 0, j, p) : b.at(0, 0, p, j));
          CHECK(c.at(0, 0, i, j) == doctest::Approx(0.5 * s + 2.0 * c0.at(0, 0, i, j)).epsilon(1e-12));
        }
    }
}

TEST_CASE("fast convolution equals the direct reference") {
  compare_conv<double>(1e-11);
  compare_conv<float>(2e-4);
}

TEST_CASE("attention equals the direct reference") {
  const auto q = random_tensor<double>(2, 4, 3, 5, 1), k = random_tensor<double>(2, 4, 3, 5, 2),
             v = random_tensor<double>(2, 4, 3, 5, 3);
  Tensor<double> probs;
  CHECK(max_diff(attention_forward(q, k, v, probs), attention_forward_reference(q, k, v)) < 1e-12);
  for (int i = 0; i < 2; ++i)
    for (int r = 0; r < 15; ++r) {
      double s = 0;
      for (int c = 0; c < 15; ++c) s += probs.at(i, 0, r, c);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("group norm normalises each group") {
  const auto x = random_tensor<double>(2, 8, 4, 4, 4, 3.0);
  Tensor<double> gamma(1, 8, 1, 1, 1.0), beta(1, 8, 1, 1, 0.0);
  GroupNormCache<double> cache;
  const auto y = group_norm_forward(x, gamma, beta, 4, 1e-5, cache);
  for (int i = 0; i < 2; ++i)
    for (int grp = 0; grp < 4; ++grp) {
      double s = 0, s2 = 0;
      for (int c = grp * 2; c < grp * 2 + 2; ++c)
        for (int p = 0; p < 16; ++p) {
          const double v = y.item(i)[c * 16 + p];
          s += v;
          s2 += v * v;
        }
      CHECK(s / 32 == doctest::Approx(0.0).epsilon(1e-12).scale(1));
      CHECK(s2 / 32 == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("graph op gradients match finite differences") {
  SUBCASE("conv2d") {
    for (ConvGeometry geom : {ConvGeometry{1, 1}, ConvGeometry{2, 1}, ConvGeometry{1, 0}}) {
      const int k = geom.pad == 0 ? 1 : 3;
      gradient_check({random_tensor<double>(2, 3, 6, 6, 1), random_tensor<double>(4, 3, k, k, 2),
                      random_tensor<double>(1, 4, 1, 1, 3)},
                     [geom](Graph<double>& g, const std::vector<int>& p) { return conv2d(g, p[0], p[1], p[2], geom); });
    }
  }
  SUBCASE("group_norm") {
    gradient_check({random_tensor<double>(2, 6, 3, 3, 4, 2.0), random_tensor<double>(1, 6, 1, 1, 5),
                    random_tensor<double>(1, 6, 1, 1, 6)},
                   [](Graph<double>& g, const std::vector<int>& p) { return group_norm(g, p[0], p[1], p[2], 3); });
  }
  SUBCASE("silu") {
    gradient_check({random_tensor<double>(2, 3, 3, 3, 7, 2.0)},
                   [](Graph<double>& g, const std::vector<int>& p) { return silu(g, p[0]); });
  }
  SUBCASE("add and channel bias") {
    gradient_check({random_tensor<double>(2, 3, 4, 4, 8), random_tensor<double>(2, 3, 4, 4, 9),
                    random_tensor<double>(2, 3, 1, 1, 10)},
                   [](Graph<double>& g, const std::vector<int>& p) {
                     return add_channel_bias(g, add(g, p[0], p[1]), p[2]);
                   });
  }
  SUBCASE("linear") {
    gradient_check({random_tensor<double>(3, 5, 1, 1, 11), random_tensor<double>(4, 5, 1, 1, 12),
                    random_tensor<double>(1, 4, 1, 1, 13)},
                   [](Graph<double>& g, const std::vector<int>& p) { return linear(g, p[0], p[1], p[2]); });
  }
  SUBCASE("concat and upsample") {
    gradient_check({random_tensor<double>(2, 2, 3, 3, 14), random_tensor<double>(2, 3, 3, 3, 15)},
                   [](Graph<double>& g, const std::vector<int>& p) {
                     return upsample_nearest2x(g, concat_channels(g, p[0], p[1]));
                   });
  }
  SUBCASE("attention") {
    gradient_check({random_tensor<double>(2, 3, 2, 3, 16), random_tensor<double>(2, 3, 2, 3, 17),
                    random_tensor<double>(2, 3, 2, 3, 18)},
                   [](Graph<double>& g, const std::vector<int>& p) { return attention(g, p[0], p[1], p[2]); });
  }
  SUBCASE("dropout with a fixed mask") {
    gradient_check({random_tensor<double>(2, 3, 4, 4, 19)}, [](Graph<double>& g, const std::vector<int>& p) {
      Rng rng(5);
      return dropout(g, p[0], 0.3, rng);
    });
  }
}

TEST_CASE("dropout keeps the expectation") {
  Graph<double> g(false);
  const Tensor<double> x(1, 1, 200, 200, 1.0);
  Rng rng(1);
  const auto& y = g.value(dropout(g, g.constant(x), 0.25, rng));
  double s = 0;
  int zeros = 0;
  for (double v : y.values()) {
    s += v;
    zeros += v == 0.0;
    if (v != 0.0) CHECK(v == doctest::Approx(1.0 / 0.75));
  }
  CHECK(s / y.size() == doctest::Approx(1.0).epsilon(0.02));
  CHECK(zeros / double(y.size()) == doctest::Approx(0.25).epsilon(0.05));
}
