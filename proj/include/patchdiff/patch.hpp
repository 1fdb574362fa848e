#pragma once

#include <cstdint>
#include <vector>

#include "patchdiff/estimator.hpp"
#include "patchdiff/image.hpp"
#include "patchdiff/schedule.hpp"

namespace patchdiff {

/// Overlapping p x p patch positions on an H x W image, laid out on a grid
/// with step r, plus the per-pixel cover count.
struct PatchGrid {
  int image_height = 0;
  int image_width = 0;
  int patch_size = 0;
  int step = 0;
  /// Top-left offsets in row-major order.
  std::vector<PatchOrigin> positions;
  /// Number of patches covering each pixel, row-major H x W.
  std::vector<int> counts;

  int size() const { return static_cast<int>(positions.size()); }
  int count(int row, int col) const { return counts[static_cast<std::size_t>(row) * image_width + col]; }
  /// r == p: patches tile the image without overlap (ablation setting).
  bool non_overlapping() const { return step == patch_size; }
};

/// Requires H, W >= p, 1 <= r <= p and (H - p), (W - p) divisible by r.
PatchGrid build_grid(int height, int width, int patch_size, int step);

struct BlendOptions {
  /// Upper bound on patch estimates held in memory at once.
  int max_patches_in_flight = 64;
  /// Evaluate the patches of a chunk on OpenMP threads.
  bool parallel = true;
};

/// Mean estimated noise: every pixel receives the average, over all patches
/// covering it, of the estimator's output at that pixel. Accumulation is in
/// double and always in position order, so the result does not depend on
/// `options` or the thread count.
ImageTensor blend_noise(const NoiseEstimator& estimator, const ImageTensor& x_t, const ImageTensor& cond,
                        const PatchGrid& grid, int t, const BlendOptions& options = {});

/// Serial, one-patch-at-a-time accumulation into whole-image sum and count
/// buffers followed by elementwise division. Reference for `blend_noise`.
ImageTensor blend_noise_reference(const NoiseEstimator& estimator, const ImageTensor& x_t,
                                  const ImageTensor& cond, const PatchGrid& grid, int t);

struct RestoreOptions {
  int patch_size = 64;
  int grid_step = 16;
  std::uint64_t seed = 0;
  BlendOptions blend;
};

/// Patch-based restoration of a whole image: one global x_T ~ N(0, I), then
/// implicit steps driven by the blended noise estimate. Output is clamped to
/// [-1, 1].
ImageTensor restore(const NoiseEstimator& estimator, const ImageTensor& cond, const NoiseSchedule& schedule,
                    const TimestepSubsequence& subsequence, const RestoreOptions& options);

/// Baseline: every patch is sampled independently to completion (patch d uses
/// seed + d) and the final reconstructions are averaged per pixel.
ImageTensor naive_restore(const NoiseEstimator& estimator, const ImageTensor& cond,
                          const NoiseSchedule& schedule, const TimestepSubsequence& subsequence,
                          const RestoreOptions& options);

}  // namespace patchdiff
