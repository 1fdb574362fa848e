#pragma once

#include <cstdint>
#include <random>

#include "patchdiff/image.hpp"

namespace patchdiff {

/// Seeded generator with a fully specified output sequence.
///
/// Bits come from std::mt19937_64, whose sequence is fixed by the standard.
/// The distributions are implemented here rather than with <random>'s
/// distribution classes (whose algorithms are implementation-defined):
///   uniform01: top 53 bits of one draw scaled by 2^-53, in [0, 1).
///   normal:    Box-Muller on two uniforms (u1 mapped to (0, 1]); the cosine
///              branch is returned first and the sine branch is cached.
///   uniform_int(n): rejection sampling on the raw 64-bit draw.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform01();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n);
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(uniform_int(static_cast<std::uint64_t>(hi - lo) + 1));
  }
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

/// Combines a base seed with a stream index into an independent seed (SplitMix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Standard-normal image filled in storage order.
ImageTensor normal_image(int height, int width, int channels, Rng& rng);

}  // namespace patchdiff
