#include <doctest.h>

#include <cmath>

#include "patchdiff/diffusion.hpp"
#include "patchdiff/errors.hpp"
#include "patchdiff/patch.hpp"
#include "support.hpp"

using namespace patchdiff;

namespace {

const NoiseSchedule& schedule() {
  static const NoiseSchedule s(ScheduleParams{});
  return s;
}

// Depends nonlinearly on the patch contents, the patch-local coordinate, the
// absolute origin and t, so every blending mistake shows up.
FunctionEstimator local_estimator() {
  return FunctionEstimator([](const ImageTensor& x, const ImageTensor& cond, int t, PatchOrigin at) {
    ImageTensor out(x.height(), x.width(), x.channels());
    double patch_mean = 0;
    for (double v : x.values()) patch_mean += v;
    patch_mean /= x.size();
    for (int r = 0; r < x.height(); ++r)
      for (int c = 0; c < x.width(); ++c)
        for (int k = 0; k < 3; ++k) {
          out.at(r, c, k) = std::sin(x.at(r, c, k) + 0.3 * cond.at(r, c, k)) + 0.01 * r - 0.02 * c +
                            0.001 * (at.row + 2 * at.col) + 0.5 * patch_mean + 1e-4 * t;
        }
    return out;
  });
}

// Per-pixel mean over an explicit enumeration of every covering patch.
ImageTensor brute_force_blend(const NoiseEstimator& est, const ImageTensor& x, const ImageTensor& cond, int p, int r,
                              int t) {
  const int h = x.height(), w = x.width();
  std::vector<ImageTensor> patches;
  std::vector<PatchOrigin> origins;
  for (int row = 0; row + p <= h; row += r)
    for (int col = 0; col + p <= w; col += r) {
      origins.push_back({row, col});
      patches.push_back(est.estimate(x.crop(row, col, p, p), cond.crop(row, col, p, p), t, {row, col}));
    }
  ImageTensor out(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int k = 0; k < 3; ++k) {
        double s = 0;
        int m = 0;
        for (std::size_t d = 0; d < origins.size(); ++d) {
          const int ly = y - origins[d].row, lx = xx - origins[d].col;
          if (ly < 0 || ly >= p || lx < 0 || lx >= p) continue;
          s += patches[d].at(ly, lx, k);
          ++m;
        }
        out.at(y, xx, k) = s / m;
      }
  return out;
}

}  // namespace

TEST_CASE("grid geometry on 128x128 with p=64, r=16") {
  const PatchGrid g = build_grid(128, 128, 64, 16);
  CHECK(g.size() == 25);
  CHECK(g.count(64, 64) == 16);
  CHECK(g.count(0, 0) == 1);
  CHECK(g.count(127, 127) == 1);
  CHECK(g.count(0, 64) == 4);
  CHECK(!g.non_overlapping());
  CHECK(g.positions.front().row == 0);
  CHECK(g.positions[1].col == 16);
  CHECK(g.positions.back().row == 64);
  CHECK(g.positions.back().col == 64);
  for (int y = 0; y < 128; ++y)
    for (int x = 0; x < 128; ++x) {
      int m = 0;
      for (const PatchOrigin& o : g.positions) m += y >= o.row && y < o.row + 64 && x >= o.col && x < o.col + 64;
      REQUIRE(g.count(y, x) == m);
    }
}

TEST_CASE("grid special cases") {
  const PatchGrid half = build_grid(128, 128, 64, 32);
  CHECK(half.size() == 9);
  CHECK(half.count(64, 64) == 4);
  const PatchGrid tiles = build_grid(128, 64, 64, 64);
  CHECK(tiles.non_overlapping());
  CHECK(tiles.size() == 2);
  for (int c : tiles.counts) CHECK(c == 1);
  const PatchGrid one = build_grid(64, 64, 64, 16);
  CHECK(one.size() == 1);
}

TEST_CASE("grid preconditions") {
  CHECK_THROWS_AS(build_grid(128, 128, 64, 0), GeometryError);
  CHECK_THROWS_AS(build_grid(128, 128, 64, 65), GeometryError);
  CHECK_THROWS_AS(build_grid(32, 128, 64, 16), GeometryError);
  CHECK_THROWS_AS(build_grid(136, 128, 64, 16), GeometryError);
  CHECK_THROWS_AS(build_grid(128, 120, 64, 16), GeometryError);
  try {
    build_grid(136, 128, 64, 16);
  } catch (const GeometryError& e) {
    CHECK(std::string(e.what()).find("divisible") != std::string::npos);
  }
}

TEST_CASE("blend equals the brute-force per-pixel mean") {
  const ImageTensor x = test::uniform_image(128, 128, 3, 1, -2, 2);
  const ImageTensor cond = test::uniform_image(128, 128, 3, 2);
  const FunctionEstimator est = local_estimator();
  const PatchGrid grid = build_grid(128, 128, 64, 16);
  const ImageTensor expected = brute_force_blend(est, x, cond, 64, 16, 321);
  CHECK(max_abs_diff(blend_noise(est, x, cond, grid, 321), expected) <= 1e-12);
  CHECK(max_abs_diff(blend_noise_reference(est, x, cond, grid, 321), expected) <= 1e-12);
}

TEST_CASE("blend is independent of chunking and threading") {
  const ImageTensor x = test::uniform_image(96, 80, 3, 3);
  const ImageTensor cond = test::uniform_image(96, 80, 3, 4);
  const FunctionEstimator est = local_estimator();
  const PatchGrid grid = build_grid(96, 80, 32, 16);
  const ImageTensor base = blend_noise(est, x, cond, grid, 5);
  for (int chunk : {1, 3, 7, 1000})
    for (bool parallel : {false, true}) {
      CAPTURE(chunk);
      CHECK(blend_noise(est, x, cond, grid, 5, {chunk, parallel}) == base);
    }
  CHECK(blend_noise_reference(est, x, cond, grid, 5) == base);
}

TEST_CASE("blend of a position-only field reproduces the field") {
  const PositionalOracle field([](int r, int c) { return 0.01 * r * r - 0.3 * c + 2.0; });
  const ImageTensor x(64, 96, 3);
  const ImageTensor out = blend_noise(field, x, x, build_grid(64, 96, 32, 8), 1);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 96; ++c) CHECK(out.at(r, c, 1) == doctest::Approx(0.01 * r * r - 0.3 * c + 2.0).epsilon(1e-13));
}

TEST_CASE("blend is linear in the estimator") {
  const ImageTensor x = test::uniform_image(64, 64, 3, 5);
  const ImageTensor cond = test::uniform_image(64, 64, 3, 6);
  const PatchGrid grid = build_grid(64, 64, 32, 16);
  const FunctionEstimator e1 = local_estimator();
  const PositionalOracle e2([](int r, int c) { return std::cos(0.1 * r + 0.2 * c); });
  const FunctionEstimator mix([&](const ImageTensor& xt, const ImageTensor& cd, int t, PatchOrigin at) {
    ImageTensor a = e1.estimate(xt, cd, t, at);
    const ImageTensor b = e2.estimate(xt, cd, t, at);
    for (std::size_t i = 0; i < a.size(); ++i) a.values()[i] = 2.0 * a.values()[i] - 0.5 * b.values()[i];
    return a;
  });
  const ImageTensor lhs = blend_noise(mix, x, cond, grid, 9);
  const ImageTensor b1 = blend_noise(e1, x, cond, grid, 9), b2 = blend_noise(e2, x, cond, grid, 9);
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    CHECK(lhs.values()[i] == doctest::Approx(2.0 * b1.values()[i] - 0.5 * b2.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("blend rejects mismatched shapes") {
  const ImageTensor x(64, 64, 3);
  const PatchGrid grid = build_grid(64, 64, 32, 16);
  CHECK_THROWS_AS(blend_noise(ConstantOracle(0), ImageTensor(48, 64, 3), x, grid, 1), ShapeError);
  const FunctionEstimator wrong([](const ImageTensor&, const ImageTensor&, int, PatchOrigin) { return ImageTensor(4, 4, 3); });
  CHECK_THROWS_AS(blend_noise(wrong, x, x, grid, 1), ShapeError);
}

TEST_CASE("restore with exact noise recovers a known 128x128 image") {
  const ImageTensor x0 = test::uniform_image(128, 128, 3, 7, -0.9, 0.9);
  const ExactEpsOracle oracle(x0, schedule());
  RestoreOptions opts;
  opts.patch_size = 64;
  opts.grid_step = 16;
  opts.seed = 3;
  const ImageTensor out = restore(oracle, x0, schedule(), make_subsequence(1000, 10), opts);
  CHECK(max_abs_diff(out, x0) <= 1e-4);
  const ImageTensor naive = naive_restore(oracle, x0, schedule(), make_subsequence(1000, 10), opts);
  CHECK(max_abs_diff(naive, x0) <= 1e-4);
}

TEST_CASE("restore on a single patch is bitwise sample_patch") {
  const ImageTensor cond = test::uniform_image(64, 64, 3, 8);
  const FunctionEstimator est = local_estimator();
  const TimestepSubsequence sub = make_subsequence(1000, 10);
  RestoreOptions opts;
  opts.patch_size = 64;
  opts.seed = 1234;
  const ImageTensor single = sample_patch(est, cond, schedule(), sub, 1234);
  CHECK(restore(est, cond, schedule(), sub, opts) == single);
  CHECK(naive_restore(est, cond, schedule(), sub, opts) == single);
}

TEST_CASE("restore is deterministic under parallel evaluation") {
  const ImageTensor cond = test::uniform_image(96, 96, 3, 9);
  const FunctionEstimator est = local_estimator();
  const TimestepSubsequence sub = make_subsequence(1000, 10);
  RestoreOptions opts;
  opts.patch_size = 32;
  opts.seed = 5;
  const ImageTensor a = restore(est, cond, schedule(), sub, opts);
  CHECK(restore(est, cond, schedule(), sub, opts) == a);
  opts.blend = {5, false};
  CHECK(restore(est, cond, schedule(), sub, opts) == a);
  for (double v : a.values()) CHECK((v >= -1.0 && v <= 1.0));
  opts.seed = 6;
  CHECK(!(restore(est, cond, schedule(), sub, opts) == a));
}

TEST_CASE("restore validates geometry") {
  RestoreOptions opts;
  opts.patch_size = 64;
  opts.grid_step = 16;
  CHECK_THROWS_AS(restore(ConstantOracle(0), ImageTensor(72, 64, 3), schedule(), make_subsequence(1000, 10), opts),
                  GeometryError);
  CHECK_THROWS_AS(naive_restore(ConstantOracle(0), ImageTensor(48, 64, 3), schedule(), make_subsequence(1000, 10), opts),
                  GeometryError);
}

TEST_CASE("constant estimates blend to the constant") {
  const ImageTensor x = test::uniform_image(80, 48, 3, 11);
  const ImageTensor out = blend_noise(ConstantOracle(-0.375), x, x, build_grid(80, 48, 32, 16), 3);
  for (double v : out.values()) CHECK(v == -0.375);
}

TEST_CASE("pixels covered once keep that patch's estimate") {
  const ImageTensor x = test::uniform_image(128, 128, 3, 12);
  const ImageTensor cond = test::uniform_image(128, 128, 3, 13);
  const FunctionEstimator est = local_estimator();
  const PatchGrid grid = build_grid(128, 128, 64, 16);
  const ImageTensor out = blend_noise(est, x, cond, grid, 40);
  const ImageTensor corner = est.estimate(x.crop(0, 0, 64, 64), cond.crop(0, 0, 64, 64), 40, {0, 0});
  const ImageTensor far = est.estimate(x.crop(64, 64, 64, 64), cond.crop(64, 64, 64, 64), 40, {64, 64});
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c)
      for (int k = 0; k < 3; ++k) {
        REQUIRE(grid.count(r, c) == 1);
        CHECK(out.at(r, c, k) == corner.at(r, c, k));
        CHECK(out.at(112 + r, 112 + c, k) == far.at(48 + r, 48 + c, k));
      }
}

TEST_CASE("restore keeps the input shape") {
  const ImageTensor cond = test::uniform_image(48, 80, 3, 14);
  RestoreOptions opts;
  opts.patch_size = 32;
  const ImageTensor out = restore(ConstantOracle(0.1), cond, schedule(), make_subsequence(1000, 5), opts);
  CHECK(out.height() == 48);
  CHECK(out.width() == 80);
  CHECK(out.channels() == 3);
}
