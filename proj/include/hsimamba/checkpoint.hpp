#pragma once

// Parameter checkpoints: a JSON header (model config, seed, pipeline
// settings) followed by a flat archive of named arrays stored as raw
// little-endian data. Round trips are bit-exact; loading into a different
// precision than the one stored is an error.

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "hsimamba/common.hpp"
#include "hsimamba/model.hpp"

namespace hsi {

enum class ArrayDType : std::uint8_t { kF32 = 0, kF64 = 1 };

template <typename T>
constexpr ArrayDType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "checkpoints store float or double arrays");
  return std::is_same_v<T, float> ? ArrayDType::kF32 : ArrayDType::kF64;
}

struct NamedArray {
  std::string name;
  ArrayDType dtype = ArrayDType::kF32;
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> raw;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

struct Checkpoint {
  nlohmann::json header;
  std::vector<NamedArray> arrays;

  const NamedArray& find(const std::string& name) const {
    for (const auto& a : arrays) {
      if (a.name == name) return a;
    }
    throw IoError("checkpoint is missing array: " + name);
  }
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

template <typename T>
NamedArray array_from_tensor(const std::string& name, const Tensor<T>& t) {
  NamedArray a;
  a.name = name;
  a.dtype = dtype_of<T>();
  a.shape = t.shape();
  a.raw.resize(t.numel() * sizeof(T));
  std::memcpy(a.raw.data(), t.values().data(), a.raw.size());
  return a;
}

template <typename T>
Tensor<T> tensor_from_array(const NamedArray& a) {
  if (a.dtype != dtype_of<T>()) {
    throw ValueError("checkpoint array " + a.name + " has a different precision than requested");
  }
  if (a.raw.size() != a.numel() * sizeof(T)) {
    throw IoError("checkpoint array " + a.name + " has inconsistent byte length");
  }
  std::vector<T> vals(a.numel());
  std::memcpy(vals.data(), a.raw.data(), a.raw.size());
  return Tensor<T>::from_data(std::vector<std::size_t>(a.shape), std::move(vals));
}

/// Packs the full model (config + every named parameter) into a checkpoint.
/// `extra` is merged into the JSON header (e.g. data pipeline settings).
template <typename T>
Checkpoint make_model_checkpoint(const ModelConfig& cfg, ModelParams<T>& params,
                                 nlohmann::json extra = {}) {
  Checkpoint ckpt;
  ckpt.header = std::move(extra);
  ckpt.header["model_config"] = cfg;
  ckpt.header["precision"] = std::is_same_v<T, float> ? "f32" : "f64";
  for_each_param(params, [&](const char* name, Tensor<T>& t) {
    ckpt.arrays.push_back(array_from_tensor(name, t));
  });
  return ckpt;
}

/// Rebuilds config + parameters from a checkpoint, verifying that every
/// expected array is present with the shape the config implies.
template <typename T>
std::pair<ModelConfig, ModelParams<T>> restore_model(const Checkpoint& ckpt) {
  ModelConfig cfg = ckpt.header.at("model_config").get<ModelConfig>();
  cfg.validate();
  ModelParams<T> params = init_model_params<T>(cfg);
  for_each_param(params, [&](const char* name, Tensor<T>& t) {
    const NamedArray& a = ckpt.find(name);
    if (a.shape != t.shape()) {
      throw IoError(std::string("checkpoint array ") + name +
                    " has a shape inconsistent with the stored config");
    }
    t = tensor_from_array<T>(a).set_requires_grad(true);
  });
  return {cfg, std::move(params)};
}

}  // namespace hsi
