#include "patchdiff/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "patchdiff/errors.hpp"
#include "patchdiff/rng.hpp"

namespace patchdiff {
namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestTag = "#patchdiff-manifest";
constexpr int kManifestVersion = 1;

struct Rgb {
  double r, g, b;
};

Rgb random_colour(Rng& rng) {
  return {rng.uniform(-0.9, 0.7), rng.uniform(-0.9, 0.7), rng.uniform(-0.9, 0.7)};
}

void set_pixel(ImageTensor& img, int r, int c, const Rgb& col) {
  img.at(r, c, 0) = col.r;
  img.at(r, c, 1) = col.g;
  img.at(r, c, 2) = col.b;
}

// Blends pixel (r, c) towards `target` with weight alpha.
void blend_pixel(ImageTensor& img, int r, int c, double target, double alpha) {
  for (int k = 0; k < img.channels(); ++k) img.at(r, c, k) = (1.0 - alpha) * img.at(r, c, k) + alpha * target;
}

void speckle_snow(ImageTensor& img, double severity, Rng& rng) {
  const int h = img.height(), w = img.width();
  const int flakes = static_cast<int>(std::lround(0.12 * severity * h * w));
  for (int f = 0; f < flakes; ++f) {
    const double cy = rng.uniform(0.0, h);
    const double cx = rng.uniform(0.0, w);
    const double radius = rng.uniform(0.5, 1.6);
    const double opacity = rng.uniform(0.7, 1.0);
    const int r0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
    const int r1 = std::min(h - 1, static_cast<int>(std::ceil(cy + radius)));
    const int c0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
    const int c1 = std::min(w - 1, static_cast<int>(std::ceil(cx + radius)));
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const double dy = r + 0.5 - cy, dx = c + 0.5 - cx;
        if (dy * dy + dx * dx <= radius * radius) blend_pixel(img, r, c, 1.0, opacity);
      }
  }
}

void streak_rain(ImageTensor& img, double severity, Rng& rng) {
  const int h = img.height(), w = img.width();
  const int streaks = static_cast<int>(std::lround(0.02 * severity * h * w));
  const double dominant = rng.uniform(-0.4, 0.4);
  std::vector<char> hit(static_cast<std::size_t>(h) * w);
  for (int s = 0; s < streaks; ++s) {
    const double angle = dominant + rng.uniform(-0.1, 0.1);
    const double length = rng.uniform(6.0, 14.0);
    const double alpha = rng.uniform(0.25, 0.5);
    const double y = rng.uniform(0.0, h), x = rng.uniform(0.0, w);
    const double dy = std::cos(angle), dx = std::sin(angle);
    std::fill(hit.begin(), hit.end(), 0);
    for (double u = 0.0; u <= length; u += 0.5) {
      const int r = static_cast<int>(std::floor(y + u * dy));
      const int c = static_cast<int>(std::floor(x + u * dx));
      if (r < 0 || r >= h || c < 0 || c >= w) continue;
      char& mark = hit[static_cast<std::size_t>(r) * w + c];
      if (mark) continue;
      mark = 1;
      blend_pixel(img, r, c, 1.0, alpha);
    }
  }
}

void blob_drop(ImageTensor& img, double severity, Rng& rng) {
  const int h = img.height(), w = img.width();
  const int drops = std::max(1, static_cast<int>(std::lround(0.004 * severity * h * w)));
  const ImageTensor scene = img;
  for (int d = 0; d < drops; ++d) {
    const double cy = rng.uniform(0.0, h), cx = rng.uniform(0.0, w);
    const double radius = rng.uniform(2.0, 6.0);
    const int r0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
    const int r1 = std::min(h - 1, static_cast<int>(std::ceil(cy + radius)));
    const int c0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
    const int c1 = std::min(w - 1, static_cast<int>(std::ceil(cx + radius)));
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const double ry = r + 0.5 - cy, rx = c + 0.5 - cx;
        if (ry * ry + rx * rx > radius * radius) continue;
        // Refraction stand-in: 5x5 box blur of the clean scene, lifted towards white.
        for (int k = 0; k < img.channels(); ++k) {
          double sum = 0.0;
          int n = 0;
          for (int yy = std::max(0, r - 2); yy <= std::min(h - 1, r + 2); ++yy)
            for (int xx = std::max(0, c - 2); xx <= std::min(w - 1, c + 2); ++xx, ++n) sum += scene.at(yy, xx, k);
          img.at(r, c, k) = 0.8 * (sum / n) + 0.2;
        }
      }
  }
}

std::string format_severity(double s) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", s);
  return buf;
}

}  // namespace

ImageTensor resize_bilinear(const ImageTensor& image, int height, int width) {
  if (height < 1 || width < 1) throw ShapeError("resize target must be positive");
  ImageTensor out(height, width, image.channels());
  const double sy = static_cast<double>(image.height()) / height;
  const double sx = static_cast<double>(image.width()) / width;
  for (int r = 0; r < height; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, image.height() - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, image.height() - 1);
    const double wy = fy - y0;
    for (int c = 0; c < width; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, image.width() - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, image.width() - 1);
      const double wx = fx - x0;
      for (int k = 0; k < image.channels(); ++k) {
        const double top = (1 - wx) * image.at(y0, x0, k) + wx * image.at(y0, x1, k);
        const double bottom = (1 - wx) * image.at(y1, x0, k) + wx * image.at(y1, x1, k);
        out.at(r, c, k) = (1 - wy) * top + wy * bottom;
      }
    }
  }
  return out;
}

int nearest_multiple(int extent, int m) {
  if (m < 1) throw RangeError("multiple must be positive");
  if (extent < m) {
    throw ShapeError("dimension " + std::to_string(extent) + " is smaller than the multiple " + std::to_string(m));
  }
  const int q = extent / m;
  const int rem = extent % m;
  return (2 * rem > m ? q + 1 : q) * m;
}

ImageTensor resize_to_multiple(const ImageTensor& image, int m) {
  const int h = nearest_multiple(image.height(), m);
  const int w = nearest_multiple(image.width(), m);
  if (h == image.height() && w == image.width()) return image;
  return resize_bilinear(image, h, w);
}

std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::kSpeckleSnow:
      return "speckle-snow";
    case CorruptionKind::kStreakRain:
      return "streak-rain";
    case CorruptionKind::kBlobDrop:
      return "blob-drop";
  }
  return "unknown";
}

CorruptionKind parse_corruption_kind(const std::string& name) {
  if (name == "speckle-snow") return CorruptionKind::kSpeckleSnow;
  if (name == "streak-rain") return CorruptionKind::kStreakRain;
  if (name == "blob-drop") return CorruptionKind::kBlobDrop;
  throw ConfigError("unknown corruption kind '" + name + "' (expected speckle-snow, streak-rain or blob-drop)");
}

ImageTensor synth_corrupt(const ImageTensor& clean, CorruptionKind kind, double severity, std::uint64_t seed) {
  if (!(severity >= 0.0 && severity <= 1.0)) {
    throw RangeError("severity must lie in [0, 1], got " + std::to_string(severity));
  }
  if (clean.channels() != 3) throw ShapeError("synth_corrupt expects RGB, got " + shape_string(clean));
  ImageTensor out = clean;
  if (severity == 0.0) return out;
  Rng rng(seed);
  switch (kind) {
    case CorruptionKind::kSpeckleSnow:
      speckle_snow(out, severity, rng);
      break;
    case CorruptionKind::kStreakRain:
      streak_rain(out, severity, rng);
      break;
    case CorruptionKind::kBlobDrop:
      blob_drop(out, severity, rng);
      break;
  }
  return clamped(out);
}

ImageTensor make_toy_scene(int size, std::uint64_t seed) {
  Rng rng(seed);
  ImageTensor img(size, size, 3);
  const Rgb a = random_colour(rng), b = random_colour(rng);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double gy = std::sin(angle), gx = std::cos(angle);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const double u = 0.5 + 0.5 * ((r + 0.5) / size * 2 - 1) * gy * 0.7 + 0.5 * ((c + 0.5) / size * 2 - 1) * gx * 0.7;
      set_pixel(img, r, c, {a.r + (b.r - a.r) * u, a.g + (b.g - a.g) * u, a.b + (b.b - a.b) * u});
    }
  const int shapes = rng.uniform_int(2, 5);
  for (int s = 0; s < shapes; ++s) {
    const Rgb col = random_colour(rng);
    const Rgb alt = random_colour(rng);
    const bool striped = rng.uniform01() < 0.35;
    const double period = rng.uniform(3.0, 8.0);
    const double stripe_angle = rng.uniform(0.0, std::numbers::pi);
    const bool disc = rng.uniform01() < 0.5;
    const double cy = rng.uniform(0.0, size), cx = rng.uniform(0.0, size);
    const double ry = rng.uniform(0.08, 0.3) * size, rx = disc ? ry : rng.uniform(0.08, 0.3) * size;
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) {
        const double dy = r + 0.5 - cy, dx = c + 0.5 - cx;
        const bool inside = disc ? (dy * dy + dx * dx <= ry * ry) : (std::abs(dy) <= ry && std::abs(dx) <= rx);
        if (!inside) continue;
        bool use_alt = false;
        if (striped) {
          const double proj = dy * std::sin(stripe_angle) + dx * std::cos(stripe_angle);
          use_alt = std::fmod(std::abs(proj), period) < period / 2;
        }
        set_pixel(img, r, c, use_alt ? alt : col);
      }
  }
  return img;
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty manifest " + path.string());
  {
    std::istringstream head(line);
    std::string tag;
    int version = 0;
    head >> tag >> version;
    if (tag != kManifestTag || version != kManifestVersion) {
      throw FormatError("manifest " + path.string() + " has unsupported header '" + line + "'");
    }
  }
  if (!std::getline(in, line) || line != "name\tkind\tseverity") {
    throw FormatError("manifest " + path.string() + " is missing the column header");
  }
  std::vector<ManifestEntry> entries;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string name, kind, severity;
    if (!std::getline(row, name, '\t') || !std::getline(row, kind, '\t') || !std::getline(row, severity)) {
      throw FormatError("malformed manifest row '" + line + "' in " + path.string());
    }
    entries.push_back({name, parse_corruption_kind(kind), std::stod(severity)});
  }
  return entries;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << kManifestTag << '\t' << kManifestVersion << '\n' << "name\tkind\tseverity\n";
  for (const ManifestEntry& e : entries) out << e.name << '\t' << to_string(e.kind) << '\t' << format_severity(e.severity) << '\n';
  if (!out) throw IoError("failed writing manifest " + path.string());
}

std::vector<ManifestEntry> make_toy_dataset(int n, int size, const std::vector<CorruptionKind>& kinds,
                                            std::uint64_t seed, const fs::path& out, double severity) {
  if (n < 0) throw RangeError("image count must be non-negative");
  if (size < 16 || size % 16 != 0) throw RangeError("toy image size must be a positive multiple of 16");
  if (kinds.empty()) throw ConfigError("at least one corruption kind is required");
  std::error_code ec;
  fs::create_directories(out / "clean", ec);
  fs::create_directories(out / "degraded", ec);
  if (ec) throw IoError("cannot create dataset folders under " + out.string() + ": " + ec.message());
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "toy_%05d", i);
    const CorruptionKind kind = kinds[static_cast<std::size_t>(i) % kinds.size()];
    const ImageTensor clean = make_toy_scene(size, derive_seed(seed, 2 * static_cast<std::uint64_t>(i)));
    const ImageTensor degraded = synth_corrupt(clean, kind, severity, derive_seed(seed, 2 * static_cast<std::uint64_t>(i) + 1));
    save_png(clean, out / "clean" / (std::string(name) + ".png"));
    save_png(degraded, out / "degraded" / (std::string(name) + ".png"));
    entries.push_back({name, kind, severity});
  }
  write_manifest(entries, out / "manifest.tsv");
  return entries;
}

PairedDataset PairedDataset::open(const fs::path& root, bool cache) {
  if (!fs::is_directory(root)) throw IoError("dataset root " + root.string() + " does not exist");
  PairedDataset ds;
  ds.root_ = root;
  ds.cache_ = cache;
  if (fs::exists(root / "manifest.tsv")) {
    for (const ManifestEntry& e : read_manifest(root / "manifest.tsv")) ds.names_.push_back(e.name);
  } else {
    if (!fs::is_directory(root / "clean")) throw IoError("dataset root " + root.string() + " has no clean/ folder");
    for (const auto& entry : fs::directory_iterator(root / "clean")) {
      if (entry.path().extension() != ".png") continue;
      const std::string stem = entry.path().stem().string();
      if (fs::exists(root / "degraded" / (stem + ".png"))) ds.names_.push_back(stem);
    }
    std::sort(ds.names_.begin(), ds.names_.end());
  }
  ds.loaded_.resize(ds.names_.size());
  return ds;
}

PairedDataset PairedDataset::from_pairs(std::vector<std::pair<ImageTensor, ImageTensor>> pairs) {
  PairedDataset ds;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    require_same_shape(pairs[i].first, pairs[i].second, "dataset pair " + std::to_string(i));
    ds.names_.push_back("pair_" + std::to_string(i));
    ds.loaded_.emplace_back(std::move(pairs[i]));
  }
  return ds;
}

std::pair<ImageTensor, ImageTensor> PairedDataset::pair(std::size_t i) const {
  if (i >= names_.size()) throw RangeError("dataset index " + std::to_string(i) + " out of range");
  if (loaded_[i]) return *loaded_[i];
  std::pair<ImageTensor, ImageTensor> p{load_png(root_ / "clean" / (names_[i] + ".png")),
                                        load_png(root_ / "degraded" / (names_[i] + ".png"))};
  require_same_shape(p.first, p.second, "dataset pair '" + names_[i] + "'");
  if (cache_) loaded_[i] = p;
  return p;
}

}  // namespace patchdiff
