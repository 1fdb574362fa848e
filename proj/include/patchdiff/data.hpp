#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "patchdiff/image.hpp"

namespace patchdiff {

/// 8-bit RGB PNG -> model space. Grey, palette, alpha and 16-bit inputs are
/// converted to 8-bit RGB first.
ImageTensor load_png(const std::filesystem::path& path);

/// Model space -> 8-bit RGB PNG (round-half-up, clamped). Output bytes depend
/// only on the pixel values.
void save_png(const ImageTensor& image, const std::filesystem::path& path);

/// Bilinear resize (half-pixel centres, edge clamped).
ImageTensor resize_bilinear(const ImageTensor& image, int height, int width);

/// Nearest multiple of m per dimension, ties rounding down; never below m.
int nearest_multiple(int extent, int m);

/// Resizes each dimension to its nearest multiple of m. Conforming images are
/// returned unchanged.
ImageTensor resize_to_multiple(const ImageTensor& image, int m = 16);

enum class CorruptionKind { kSpeckleSnow, kStreakRain, kBlobDrop };

std::string to_string(CorruptionKind kind);
/// Accepts "speckle-snow", "streak-rain", "blob-drop".
CorruptionKind parse_corruption_kind(const std::string& name);

/// Procedural weather-style occluders composited over a model-space image.
///
///   speckle-snow: white flakes of radius 0.5-1.6 px, 0.12 * severity flakes
///                 per pixel, opacity 0.7-1.0. At severity 0.5 about a
///                 fifth of a flat 64x64 image changes.
///   streak-rain:  thin translucent bright streaks sharing a dominant angle.
///   blob-drop:    discs replaced by a blurred, brightened copy of the scene.
///
/// Severity 0 returns the input unchanged; output stays within [-1, 1] and
/// dimensions never change.
ImageTensor synth_corrupt(const ImageTensor& clean, CorruptionKind kind, double severity, std::uint64_t seed);

/// Procedural clean scene: a two-colour gradient background with random
/// rectangles, discs and stripe textures.
ImageTensor make_toy_scene(int size, std::uint64_t seed);

struct ManifestEntry {
  std::string name;
  CorruptionKind kind;
  double severity;
};

/// Paired-folder dataset: <root>/clean/<name>.png, <root>/degraded/<name>.png
/// and <root>/manifest.tsv. Index order follows the manifest.
class PairedDataset {
 public:
  /// Opens an on-disk dataset. Without a manifest the pair list is every
  /// clean/*.png with a matching degraded file, sorted by name.
  static PairedDataset open(const std::filesystem::path& root, bool cache = true);
  /// In-memory dataset (tests, synthetic runs).
  static PairedDataset from_pairs(std::vector<std::pair<ImageTensor, ImageTensor>> pairs);

  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }

  /// (clean, degraded); throws ShapeError if the two differ in size.
  std::pair<ImageTensor, ImageTensor> pair(std::size_t i) const;

 private:
  std::filesystem::path root_;
  std::vector<std::string> names_;
  bool cache_ = true;
  mutable std::vector<std::optional<std::pair<ImageTensor, ImageTensor>>> loaded_;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

/// Writes n toy pairs (kinds assigned round-robin) plus manifest.tsv under `out`.
std::vector<ManifestEntry> make_toy_dataset(int n, int size, const std::vector<CorruptionKind>& kinds,
                                            std::uint64_t seed, const std::filesystem::path& out,
                                            double severity = 0.5);

}  // namespace patchdiff
