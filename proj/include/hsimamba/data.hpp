#pragma once

// Hyperspectral cube storage and the patch pipeline. Cubes live in a small
// binary container (see read_cube/write_cube); patches are extracted with
// mirror padding at scene borders, and augmentation permutes whole spectra
// so no value ever mixes across bands.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hsimamba/common.hpp"

namespace hsi {

enum class SplitTag : std::uint8_t { kNone = 0, kTrain = 1, kTest = 2 };

enum class NormalizeMode { kNone, kMinMax, kZScore };

inline const char* to_string(NormalizeMode m) {
  switch (m) {
    case NormalizeMode::kNone: return "none";
    case NormalizeMode::kMinMax: return "minmax";
    default: return "zscore";
  }
}
inline NormalizeMode normalize_mode_from_string(const std::string& s) {
  if (s == "none") return NormalizeMode::kNone;
  if (s == "minmax") return NormalizeMode::kMinMax;
  if (s == "zscore") return NormalizeMode::kZScore;
  throw ValueError("unknown normalize mode: " + s);
}

/// A scene: H x W pixels, `bands` reflectance values per pixel (band-
/// interleaved), a per-pixel label plane (0 = unlabeled, classes 1..K) and
/// an optional per-pixel split plane.
struct HsiCube {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t bands = 0;
  std::uint32_t num_classes = 0;
  std::vector<float> values;        // height * width * bands
  std::vector<std::int16_t> labels; // height * width
  std::vector<std::uint8_t> split;  // empty, or height * width

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  const float* spectrum(std::size_t row, std::size_t col) const {
    return &values[(row * width + col) * bands];
  }
  std::int16_t label(std::size_t row, std::size_t col) const {
    return labels[row * width + col];
  }
  void validate() const;
};

struct Patch {
  int size = 0;   // side length p (odd)
  int bands = 0;
  std::vector<float> values;  // size * size * bands, band-interleaved
  int label = -1;             // 0-based class, -1 when the center is unlabeled
  int row = 0, col = 0;       // center coordinates in the source cube

  const float* spectrum(int r, int c) const {
    return &values[(static_cast<std::size_t>(r) * size + c) * bands];
  }
};

struct SplitManifest {
  struct ClassSplit {
    int class_id = 0;  // 1-based, matching the label plane
    std::vector<std::pair<int, int>> train;
    std::vector<std::pair<int, int>> test;
  };
  std::vector<ClassSplit> classes;

  std::size_t train_total() const {
    std::size_t n = 0;
    for (const auto& c : classes) n += c.train.size();
    return n;
  }
  std::size_t test_total() const {
    std::size_t n = 0;
    for (const auto& c : classes) n += c.test.size();
    return n;
  }
};

// Binary container: magic "HSIC", u16 version = 1, then H/W/bands/K as u32
// little-endian, float32 payload in band-interleaved-by-pixel order, an
// int16 label plane, and an optional u8 split plane. Round trips bit-exactly.
HsiCube read_cube(const std::string& path);
void write_cube(const HsiCube& cube, const std::string& path);

/// In-place per-band rescaling. Applied by the training/eval pipeline after
/// loading; never part of the file format.
void normalize_bands(HsiCube& cube, NormalizeMode mode);

/// Index folding for mirror padding: ..., 2, 1, 0 | 0, 1, 2, ... (edge
/// repeated). Exposed for the oracle tests.
std::size_t mirror_index(long long i, std::size_t n);

/// p x p window centered at (row, col); out-of-scene pixels mirror-padded.
Patch extract_patch(const HsiCube& cube, int row, int col, int p);

enum class AugmentOp { kRot45, kRot90, kRot135, kFlipH, kFlipV };

/// rot90/flips are exact index permutations; rot45/rot135 resample with
/// nearest neighbor about the center (mirror padding), so every output
/// spectrum is a verbatim copy of some input spectrum.
Patch augment(const Patch& patch, AugmentOp op);

/// Synthetic scene: K smooth endmember spectra (random splines), a seeded
/// Voronoi partition of the plane, per-pixel spectrum = endmember + N(0,
/// sigma). Every pixel is labeled. Deterministic per seed.
HsiCube gen_synthetic(int height, int width, int bands, int num_classes, double noise_sigma,
                      std::uint64_t seed);

/// Stratified draw: exactly `per_class_train_counts[k]` train pixels for
/// class k+1, the remaining labeled pixels become test.
SplitManifest build_split(const HsiCube& cube, const std::vector<int>& per_class_train_counts,
                          std::uint64_t seed);

/// Writes the manifest into the cube's split plane.
void apply_split(HsiCube& cube, const SplitManifest& manifest);

/// Rebuilds a manifest from a cube that carries a split plane.
SplitManifest manifest_from_split_plane(const HsiCube& cube);

void save_manifest(const SplitManifest& manifest, const std::string& path);
SplitManifest load_manifest(const std::string& path);

/// All patches for one side of the split, in manifest order.
std::vector<Patch> gather_patches(const HsiCube& cube, const SplitManifest& manifest,
                                  SplitTag which, int patch_size);

}  // namespace hsi
