#include "patchdiff/patch.hpp"

#include <omp.h>

#include <algorithm>
#include <exception>
#include <string>

#include "patchdiff/diffusion.hpp"
#include "patchdiff/errors.hpp"
#include "patchdiff/rng.hpp"

namespace patchdiff {
namespace {

void check_inputs(const ImageTensor& x_t, const ImageTensor& cond, const PatchGrid& grid) {
  if (x_t.height() != grid.image_height || x_t.width() != grid.image_width) {
    throw ShapeError("blend: image " + shape_string(x_t) + " does not match grid " +
                     std::to_string(grid.image_height) + "x" + std::to_string(grid.image_width));
  }
  if (cond.height() != x_t.height() || cond.width() != x_t.width()) {
    throw ShapeError("blend: condition " + shape_string(cond) + " does not match " + shape_string(x_t));
  }
}

// Adds a patch estimate into the whole-image accumulator at its grid position.
void accumulate(ImageTensor& sum, const ImageTensor& patch, PatchOrigin at, int p) {
  if (patch.height() != p || patch.width() != p || patch.channels() != sum.channels()) {
    throw ShapeError("estimator returned " + shape_string(patch) + " for a patch of a " + shape_string(sum) +
                     " image");
  }
  for (int r = 0; r < patch.height(); ++r)
    for (int c = 0; c < patch.width(); ++c)
      for (int k = 0; k < patch.channels(); ++k) sum.at(at.row + r, at.col + c, k) += patch.at(r, c, k);
}

void divide_by_counts(ImageTensor& sum, const PatchGrid& grid) {
  for (int r = 0; r < sum.height(); ++r)
    for (int c = 0; c < sum.width(); ++c) {
      const double m = grid.count(r, c);
      for (int k = 0; k < sum.channels(); ++k) sum.at(r, c, k) /= m;
    }
}

// Runs fn(d) for d in [begin, end), on OpenMP threads if requested, rethrowing
// the first exception on the calling thread.
template <typename Fn>
void for_each_patch(int begin, int end, bool parallel, Fn&& fn) {
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (int d = begin; d < end; ++d) {
    try {
      fn(d);
    } catch (...) {
#pragma omp critical(patchdiff_patch_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

PatchGrid build_grid(int height, int width, int patch_size, int step) {
  auto fail = [&](const std::string& why) {
    throw GeometryError("patch grid " + std::to_string(height) + "x" + std::to_string(width) +
                        " p=" + std::to_string(patch_size) + " r=" + std::to_string(step) + ": " + why);
  };
  if (patch_size < 1) fail("patch size must be positive");
  if (height < patch_size || width < patch_size) fail("image smaller than patch (need H >= p and W >= p)");
  if (step < 1 || step > patch_size) fail("grid step must satisfy 1 <= r <= p");
  if ((height - patch_size) % step != 0) fail("(H - p) not divisible by r");
  if ((width - patch_size) % step != 0) fail("(W - p) not divisible by r");

  PatchGrid grid;
  grid.image_height = height;
  grid.image_width = width;
  grid.patch_size = patch_size;
  grid.step = step;
  for (int row = 0; row + patch_size <= height; row += step)
    for (int col = 0; col + patch_size <= width; col += step) grid.positions.push_back({row, col});
  grid.counts.assign(static_cast<std::size_t>(height) * width, 0);
  for (const PatchOrigin& pos : grid.positions)
    for (int r = 0; r < patch_size; ++r)
      for (int c = 0; c < patch_size; ++c) ++grid.counts[static_cast<std::size_t>(pos.row + r) * width + pos.col + c];
  return grid;
}

ImageTensor blend_noise(const NoiseEstimator& estimator, const ImageTensor& x_t, const ImageTensor& cond,
                        const PatchGrid& grid, int t, const BlendOptions& options) {
  check_inputs(x_t, cond, grid);
  const int p = grid.patch_size;
  const int chunk = std::max(1, options.max_patches_in_flight);
  ImageTensor sum(x_t.height(), x_t.width(), x_t.channels());
  std::vector<ImageTensor> estimates(static_cast<std::size_t>(std::min(chunk, grid.size())));
  for (int begin = 0; begin < grid.size(); begin += chunk) {
    const int end = std::min(grid.size(), begin + chunk);
    for_each_patch(begin, end, options.parallel, [&](int d) {
      const PatchOrigin at = grid.positions[d];
      estimates[d - begin] = estimator.estimate(x_t.crop(at.row, at.col, p, p), cond.crop(at.row, at.col, p, p), t, at);
    });
    for (int d = begin; d < end; ++d) accumulate(sum, estimates[d - begin], grid.positions[d], p);
  }
  divide_by_counts(sum, grid);
  return sum;
}

ImageTensor blend_noise_reference(const NoiseEstimator& estimator, const ImageTensor& x_t,
                                  const ImageTensor& cond, const PatchGrid& grid, int t) {
  check_inputs(x_t, cond, grid);
  const int p = grid.patch_size;
  ImageTensor sum(x_t.height(), x_t.width(), x_t.channels());
  for (const PatchOrigin& at : grid.positions) {
    accumulate(sum, estimator.estimate(x_t.crop(at.row, at.col, p, p), cond.crop(at.row, at.col, p, p), t, at), at, p);
  }
  divide_by_counts(sum, grid);
  return sum;
}

ImageTensor restore(const NoiseEstimator& estimator, const ImageTensor& cond, const NoiseSchedule& schedule,
                    const TimestepSubsequence& subsequence, const RestoreOptions& options) {
  if (cond.channels() != 3) throw ShapeError("restore expects a 3-channel condition, got " + shape_string(cond));
  if (subsequence.timesteps() != schedule.timesteps()) {
    throw RangeError("subsequence and schedule disagree on T");
  }
  const PatchGrid grid = build_grid(cond.height(), cond.width(), options.patch_size, options.grid_step);
  Rng rng(options.seed);
  ImageTensor x = normal_image(cond.height(), cond.width(), 3, rng);
  for (int i = subsequence.steps(); i >= 1; --i) {
    const int t = subsequence.tau(i);
    const ImageTensor noise = blend_noise(estimator, x, cond, grid, t, options.blend);
    x = implicit_step(x, noise, t, subsequence.next(i), schedule);
  }
  return clamped(x);
}

ImageTensor naive_restore(const NoiseEstimator& estimator, const ImageTensor& cond,
                          const NoiseSchedule& schedule, const TimestepSubsequence& subsequence,
                          const RestoreOptions& options) {
  if (cond.channels() != 3) throw ShapeError("naive_restore expects a 3-channel condition, got " + shape_string(cond));
  const PatchGrid grid = build_grid(cond.height(), cond.width(), options.patch_size, options.grid_step);
  const int p = grid.patch_size;
  const int chunk = std::max(1, options.blend.max_patches_in_flight);
  ImageTensor sum(cond.height(), cond.width(), 3);
  std::vector<ImageTensor> samples(static_cast<std::size_t>(std::min(chunk, grid.size())));
  for (int begin = 0; begin < grid.size(); begin += chunk) {
    const int end = std::min(grid.size(), begin + chunk);
    for_each_patch(begin, end, options.blend.parallel, [&](int d) {
      const PatchOrigin at = grid.positions[d];
      samples[d - begin] = sample_patch(estimator, cond.crop(at.row, at.col, p, p), schedule, subsequence,
                                        options.seed + static_cast<std::uint64_t>(d), at);
    });
    for (int d = begin; d < end; ++d) accumulate(sum, samples[d - begin], grid.positions[d], p);
  }
  divide_by_counts(sum, grid);
  return sum;
}

}  // namespace patchdiff
