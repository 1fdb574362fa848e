#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "patchdiff/image.hpp"
#include "patchdiff/rng.hpp"

namespace test {

inline patchdiff::ImageTensor uniform_image(int h, int w, int c, std::uint64_t seed, double lo = -1.0,
                                            double hi = 1.0) {
  patchdiff::Rng rng(seed);
  patchdiff::ImageTensor img(h, w, c);
  for (double& v : img.values()) v = rng.uniform(lo, hi);
  return img;
}

/// Pearson statistic against equal expected counts.
inline double chi_square_uniform(const std::vector<long>& counts) {
  long total = 0;
  for (long c : counts) total += c;
  const double expected = static_cast<double>(total) / counts.size();
  double stat = 0.0;
  for (long c : counts) stat += (c - expected) * (c - expected) / expected;
  return stat;
}

/// Upper critical value of chi^2 with `dof` degrees of freedom at significance `alpha`.
inline double chi_square_critical(int dof, double alpha) {
  return boost::math::quantile(boost::math::complement(boost::math::chi_squared(dof), alpha));
}

/// Fresh empty directory under the system temp directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const std::filesystem::path p = std::filesystem::temp_directory_path() / "patchdiff_tests" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace test
