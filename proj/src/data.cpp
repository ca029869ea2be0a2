#include "hsimamba/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace hsi {

static_assert(std::endian::native == std::endian::little,
              "cube and checkpoint containers assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'H', 'S', 'I', 'C'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_raw(std::ifstream& in, T& v, const char* what) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError(std::string("cube file truncated while reading ") + what);
}

template <typename T>
void write_plane(std::ofstream& out, const std::vector<T>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
void read_plane(std::ifstream& in, std::vector<T>& v, std::size_t count, const char* what) {
  v.resize(count);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (!in) throw IoError(std::string("cube file truncated while reading ") + what);
}

}  // namespace

void HsiCube::validate() const {
  if (height == 0 || width == 0) throw ValueError("cube has empty spatial extent");
  if (bands == 0) throw ValueError("cube has zero bands");
  if (values.size() != pixels() * bands) throw ValueError("cube value plane has wrong size");
  if (labels.size() != pixels()) throw ValueError("cube label plane has wrong size");
  if (!split.empty() && split.size() != pixels()) throw ValueError("cube split plane has wrong size");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > static_cast<std::int16_t>(num_classes)) {
      throw ValueError("label " + std::to_string(labels[i]) + " outside [0," +
                       std::to_string(num_classes) + "]");
    }
    if (!split.empty()) {
      if (split[i] > 2) throw ValueError("split tag outside {0,1,2}");
      if (split[i] != 0 && labels[i] < 1) {
        throw ValueError("train/test pixel without a label at index " + std::to_string(i));
      }
    }
  }
}

HsiCube read_cube(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open cube file: " + path);

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw IoError("bad magic in cube file: " + path);
  std::uint16_t version = 0;
  read_raw(in, version, "version");
  if (version != kVersion) throw IoError("unsupported cube version " + std::to_string(version));

  HsiCube cube;
  read_raw(in, cube.height, "height");
  read_raw(in, cube.width, "width");
  read_raw(in, cube.bands, "bands");
  read_raw(in, cube.num_classes, "num_classes");
  if (cube.height == 0 || cube.width == 0 || cube.bands == 0) {
    throw ValueError("cube header declares an empty dimension");
  }
  read_plane(in, cube.values, cube.pixels() * cube.bands, "values");
  read_plane(in, cube.labels, cube.pixels(), "labels");

  // Optional split plane: present iff bytes remain.
  if (in.peek() != std::ifstream::traits_type::eof()) {
    read_plane(in, cube.split, cube.pixels(), "split");
    if (in.peek() != std::ifstream::traits_type::eof()) {
      throw IoError("trailing bytes after split plane in " + path);
    }
  }
  cube.validate();
  return cube;
}

void write_cube(const HsiCube& cube, const std::string& path) {
  cube.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write cube file: " + path);
  out.write(kMagic, 4);
  write_raw(out, kVersion);
  write_raw(out, cube.height);
  write_raw(out, cube.width);
  write_raw(out, cube.bands);
  write_raw(out, cube.num_classes);
  write_plane(out, cube.values);
  write_plane(out, cube.labels);
  if (!cube.split.empty()) write_plane(out, cube.split);
  if (!out) throw IoError("failed writing cube file: " + path);
}

void normalize_bands(HsiCube& cube, NormalizeMode mode) {
  if (mode == NormalizeMode::kNone) return;
  const std::size_t n = cube.pixels();
  for (std::uint32_t b = 0; b < cube.bands; ++b) {
    if (mode == NormalizeMode::kMinMax) {
      float lo = std::numeric_limits<float>::max();
      float hi = std::numeric_limits<float>::lowest();
      for (std::size_t i = 0; i < n; ++i) {
        const float v = cube.values[i * cube.bands + b];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      const float range = hi - lo;
      for (std::size_t i = 0; i < n; ++i) {
        float& v = cube.values[i * cube.bands + b];
        v = range > 0 ? (v - lo) / range : 0.0f;
      }
    } else {
      double mu = 0.0;
      for (std::size_t i = 0; i < n; ++i) mu += cube.values[i * cube.bands + b];
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = cube.values[i * cube.bands + b] - mu;
        var += d * d;
      }
      var /= static_cast<double>(n);
      const double inv = var > 0 ? 1.0 / std::sqrt(var) : 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        float& v = cube.values[i * cube.bands + b];
        v = static_cast<float>((v - mu) * inv);
      }
    }
  }
}

std::size_t mirror_index(long long i, std::size_t n) {
  const long long nn = static_cast<long long>(n);
  while (i < 0 || i >= nn) {
    if (i < 0) i = -i - 1;
    if (i >= nn) i = 2 * nn - 1 - i;
  }
  return static_cast<std::size_t>(i);
}

Patch extract_patch(const HsiCube& cube, int row, int col, int p) {
  if (p < 1 || p % 2 == 0) throw ValueError("patch size must be a positive odd integer");
  if (row < 0 || col < 0 || row >= static_cast<int>(cube.height) ||
      col >= static_cast<int>(cube.width)) {
    throw ValueError("patch center outside the scene");
  }
  const int half = p / 2;
  Patch patch;
  patch.size = p;
  patch.bands = static_cast<int>(cube.bands);
  patch.row = row;
  patch.col = col;
  patch.values.resize(static_cast<std::size_t>(p) * p * cube.bands);
  for (int r = 0; r < p; ++r) {
    const std::size_t sr = mirror_index(static_cast<long long>(row) - half + r, cube.height);
    for (int c = 0; c < p; ++c) {
      const std::size_t sc = mirror_index(static_cast<long long>(col) - half + c, cube.width);
      const float* src = cube.spectrum(sr, sc);
      float* dst = &patch.values[(static_cast<std::size_t>(r) * p + c) * cube.bands];
      std::memcpy(dst, src, cube.bands * sizeof(float));
    }
  }
  patch.label = static_cast<int>(cube.label(row, col)) - 1;
  return patch;
}

namespace {

/// Shared spectrum-permutation core: dst(r,c) = src(map(r,c)).
template <typename MapFn>
Patch permute_patch(const Patch& in, MapFn&& map) {
  Patch out = in;
  const int p = in.size;
  for (int r = 0; r < p; ++r) {
    for (int c = 0; c < p; ++c) {
      auto [sr, sc] = map(r, c);
      const float* src = in.spectrum(sr, sc);
      float* dst = &out.values[(static_cast<std::size_t>(r) * p + c) * in.bands];
      std::memcpy(dst, src, in.bands * sizeof(float));
    }
  }
  return out;
}

Patch rotate_nearest(const Patch& in, double degrees) {
  const int p = in.size;
  const double ctr = (p - 1) / 2.0;
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  return permute_patch(in, [&](int r, int c) {
    const double u = r - ctr, v = c - ctr;
    const long long sr = std::llround(ctr + u * cs + v * sn);
    const long long sc = std::llround(ctr - u * sn + v * cs);
    return std::pair<int, int>(static_cast<int>(mirror_index(sr, p)),
                               static_cast<int>(mirror_index(sc, p)));
  });
}

}  // namespace

Patch augment(const Patch& patch, AugmentOp op) {
  const int p = patch.size;
  switch (op) {
    case AugmentOp::kRot90:
      return permute_patch(patch, [p](int r, int c) { return std::pair<int, int>(c, p - 1 - r); });
    case AugmentOp::kFlipH:
      return permute_patch(patch, [p](int r, int c) { return std::pair<int, int>(r, p - 1 - c); });
    case AugmentOp::kFlipV:
      return permute_patch(patch, [p](int r, int c) { return std::pair<int, int>(p - 1 - r, c); });
    case AugmentOp::kRot45:
      return rotate_nearest(patch, 45.0);
    case AugmentOp::kRot135:
      return rotate_nearest(patch, 135.0);
  }
  throw ValueError("unknown augmentation op");
}

namespace {

/// Catmull-Rom spline through `ctrl`, sampled at `count` evenly spaced
/// parameters, endpoints clamped.
std::vector<float> sample_spline(const std::vector<double>& ctrl, int count) {
  const int m = static_cast<int>(ctrl.size());
  std::vector<float> out(count);
  auto pt = [&](int i) { return ctrl[static_cast<std::size_t>(std::clamp(i, 0, m - 1))]; };
  for (int i = 0; i < count; ++i) {
    const double t = count > 1 ? static_cast<double>(i) * (m - 1) / (count - 1) : 0.0;
    int seg = std::min(static_cast<int>(t), m - 2);
    const double u = t - seg;
    const double p0 = pt(seg - 1), p1 = pt(seg), p2 = pt(seg + 1), p3 = pt(seg + 2);
    const double v = p1 + 0.5 * u * (p2 - p0 + u * (2 * p0 - 5 * p1 + 4 * p2 - p3 +
                                                    u * (3 * (p1 - p2) + p3 - p0)));
    out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

}  // namespace

HsiCube gen_synthetic(int height, int width, int bands, int num_classes, double noise_sigma,
                      std::uint64_t seed) {
  if (height < 1 || width < 1 || bands < 1) throw ValueError("gen_synthetic: empty dimensions");
  if (num_classes < 1 || num_classes > 16) {
    throw ValueError("gen_synthetic: num_classes must be in [1,16]");
  }
  if (noise_sigma < 0) throw ValueError("gen_synthetic: negative noise sigma");

  Rng rng(seed);
  constexpr int kControlPoints = 6;
  std::vector<std::vector<float>> endmembers(num_classes);
  for (auto& e : endmembers) {
    std::vector<double> ctrl(kControlPoints);
    for (auto& c : ctrl) c = rng.uniform(0.2, 0.8);
    e = sample_spline(ctrl, bands);
  }

  // Voronoi partition: a few seeded sites per class, pixel class = class of
  // the nearest site (ties go to the lowest site index).
  const int sites_per_class = 3;
  struct Site {
    double r, c;
    int cls;
  };
  std::vector<Site> sites;
  for (int s = 0; s < sites_per_class * num_classes; ++s) {
    sites.push_back({rng.uniform(0.0, height), rng.uniform(0.0, width), s % num_classes});
  }

  HsiCube cube;
  cube.height = static_cast<std::uint32_t>(height);
  cube.width = static_cast<std::uint32_t>(width);
  cube.bands = static_cast<std::uint32_t>(bands);
  cube.num_classes = static_cast<std::uint32_t>(num_classes);
  cube.values.resize(cube.pixels() * cube.bands);
  cube.labels.resize(cube.pixels());
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      int best = 0;
      double best_d = std::numeric_limits<double>::max();
      for (std::size_t s = 0; s < sites.size(); ++s) {
        const double dr = sites[s].r - r, dc = sites[s].c - c;
        const double d = dr * dr + dc * dc;
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(s);
        }
      }
      const int cls = sites[best].cls;
      cube.labels[static_cast<std::size_t>(r) * width + c] = static_cast<std::int16_t>(cls + 1);
      float* spec = &cube.values[(static_cast<std::size_t>(r) * width + c) * bands];
      for (int b = 0; b < bands; ++b) {
        double v = endmembers[cls][b];
        if (noise_sigma > 0) v += noise_sigma * rng.gaussian();
        spec[b] = static_cast<float>(v);
      }
    }
  }
  return cube;
}

SplitManifest build_split(const HsiCube& cube, const std::vector<int>& per_class_train_counts,
                          std::uint64_t seed) {
  cube.validate();
  if (per_class_train_counts.size() != cube.num_classes) {
    throw ValueError("build_split: expected " + std::to_string(cube.num_classes) +
                     " per-class counts, got " + std::to_string(per_class_train_counts.size()));
  }
  std::vector<std::vector<std::pair<int, int>>> coords(cube.num_classes);
  for (std::uint32_t r = 0; r < cube.height; ++r) {
    for (std::uint32_t c = 0; c < cube.width; ++c) {
      const int label = cube.label(r, c);
      if (label >= 1) coords[label - 1].emplace_back(static_cast<int>(r), static_cast<int>(c));
    }
  }

  SplitManifest manifest;
  for (std::uint32_t k = 0; k < cube.num_classes; ++k) {
    const int want = per_class_train_counts[k];
    if (want < 0) throw ValueError("build_split: negative train count");
    if (static_cast<std::size_t>(want) > coords[k].size()) {
      throw ValueError("build_split: class " + std::to_string(k + 1) + " has only " +
                       std::to_string(coords[k].size()) + " labeled pixels, requested " +
                       std::to_string(want));
    }
    Rng rng(Rng::mix(seed, k));
    rng.shuffle(coords[k].begin(), coords[k].end());
    SplitManifest::ClassSplit cs;
    cs.class_id = static_cast<int>(k + 1);
    cs.train.assign(coords[k].begin(), coords[k].begin() + want);
    cs.test.assign(coords[k].begin() + want, coords[k].end());
    manifest.classes.push_back(std::move(cs));
  }
  return manifest;
}

void apply_split(HsiCube& cube, const SplitManifest& manifest) {
  cube.split.assign(cube.pixels(), static_cast<std::uint8_t>(SplitTag::kNone));
  for (const auto& cs : manifest.classes) {
    for (const auto& [r, c] : cs.train) {
      cube.split[static_cast<std::size_t>(r) * cube.width + c] =
          static_cast<std::uint8_t>(SplitTag::kTrain);
    }
    for (const auto& [r, c] : cs.test) {
      cube.split[static_cast<std::size_t>(r) * cube.width + c] =
          static_cast<std::uint8_t>(SplitTag::kTest);
    }
  }
  cube.validate();
}

SplitManifest manifest_from_split_plane(const HsiCube& cube) {
  if (cube.split.empty()) throw ValueError("cube carries no split plane");
  SplitManifest manifest;
  manifest.classes.resize(cube.num_classes);
  for (std::uint32_t k = 0; k < cube.num_classes; ++k) {
    manifest.classes[k].class_id = static_cast<int>(k + 1);
  }
  for (std::uint32_t r = 0; r < cube.height; ++r) {
    for (std::uint32_t c = 0; c < cube.width; ++c) {
      const auto tag = static_cast<SplitTag>(cube.split[static_cast<std::size_t>(r) * cube.width + c]);
      if (tag == SplitTag::kNone) continue;
      auto& cs = manifest.classes[cube.label(r, c) - 1];
      auto& dst = tag == SplitTag::kTrain ? cs.train : cs.test;
      dst.emplace_back(static_cast<int>(r), static_cast<int>(c));
    }
  }
  return manifest;
}

void save_manifest(const SplitManifest& manifest, const std::string& path) {
  nlohmann::json j;
  j["classes"] = nlohmann::json::array();
  for (const auto& cs : manifest.classes) {
    nlohmann::json jc;
    jc["class"] = cs.class_id;
    jc["train_count"] = cs.train.size();
    jc["test_count"] = cs.test.size();
    jc["train"] = cs.train;
    jc["test"] = cs.test;
    j["classes"].push_back(std::move(jc));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

SplitManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + path + ": " + e.what());
  }
  SplitManifest manifest;
  for (const auto& jc : j.at("classes")) {
    SplitManifest::ClassSplit cs;
    cs.class_id = jc.at("class").get<int>();
    cs.train = jc.at("train").get<std::vector<std::pair<int, int>>>();
    cs.test = jc.at("test").get<std::vector<std::pair<int, int>>>();
    if (jc.contains("train_count") && jc.at("train_count").get<std::size_t>() != cs.train.size()) {
      throw IoError("manifest train_count disagrees with coordinate list");
    }
    if (jc.contains("test_count") && jc.at("test_count").get<std::size_t>() != cs.test.size()) {
      throw IoError("manifest test_count disagrees with coordinate list");
    }
    manifest.classes.push_back(std::move(cs));
  }
  return manifest;
}

std::vector<Patch> gather_patches(const HsiCube& cube, const SplitManifest& manifest,
                                  SplitTag which, int patch_size) {
  std::vector<Patch> out;
  for (const auto& cs : manifest.classes) {
    const auto& coords = which == SplitTag::kTrain ? cs.train : cs.test;
    for (const auto& [r, c] : coords) {
      out.push_back(extract_patch(cube, r, c, patch_size));
    }
  }
  return out;
}

}  // namespace hsi
