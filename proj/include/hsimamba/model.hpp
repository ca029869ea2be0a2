#pragma once

// End-to-end classifier: spectral block + spatial branch fused by addition,
// followed by a single linear head. The three ablation switches zero out a
// path's contribution without changing parameter shapes, so checkpoints stay
// compatible across every ablation configuration.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "hsimamba/block.hpp"
#include "hsimamba/common.hpp"
#include "hsimamba/spatial.hpp"
#include "hsimamba/tensor.hpp"

namespace hsi {

struct ModelConfig {
  BlockConfig block;
  int num_classes = 2;
  bool forward_on = true;
  bool backward_on = true;
  bool spatial_on = true;
  std::uint64_t seed = 0;

  void validate() const {
    block.validate();
    if (num_classes < 2) throw ValueError("num_classes must be at least 2");
    if (!forward_on && !backward_on && !spatial_on) {
      throw ValueError("at least one of the forward/backward/spatial paths must be enabled");
    }
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& cfg) {
  j = nlohmann::json{{"spatial_dim", cfg.block.spatial_dim},
                     {"num_bands", cfg.block.num_bands},
                     {"hidden_dim", cfg.block.hidden_dim},
                     {"output_dim", cfg.block.output_dim},
                     {"delta_init", cfg.block.delta_init},
                     {"sequence_mode", to_string(cfg.block.sequence_mode)},
                     {"reverse_mode", to_string(cfg.block.reverse_mode)},
                     {"num_classes", cfg.num_classes},
                     {"forward_on", cfg.forward_on},
                     {"backward_on", cfg.backward_on},
                     {"spatial_on", cfg.spatial_on},
                     {"seed", cfg.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& cfg) {
  j.at("spatial_dim").get_to(cfg.block.spatial_dim);
  j.at("num_bands").get_to(cfg.block.num_bands);
  j.at("hidden_dim").get_to(cfg.block.hidden_dim);
  j.at("output_dim").get_to(cfg.block.output_dim);
  j.at("delta_init").get_to(cfg.block.delta_init);
  cfg.block.sequence_mode = sequence_mode_from_string(j.at("sequence_mode").get<std::string>());
  cfg.block.reverse_mode = reverse_mode_from_string(j.at("reverse_mode").get<std::string>());
  j.at("num_classes").get_to(cfg.num_classes);
  j.at("forward_on").get_to(cfg.forward_on);
  j.at("backward_on").get_to(cfg.backward_on);
  j.at("spatial_on").get_to(cfg.spatial_on);
  j.at("seed").get_to(cfg.seed);
}

template <typename T>
struct ModelParams {
  BlockParams<T> block;
  SpatialParams<T> spatial;
  Tensor<T> w_c;  // [out, K]
  Tensor<T> b_c;  // [K]
};

template <typename T, typename Fn>
void for_each_param(ModelParams<T>& p, Fn&& fn) {
  for_each_param(p.block, fn);
  for_each_param(p.spatial, fn);
  fn("classifier.w", p.w_c);
  fn("classifier.b", p.b_c);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> named_parameters(ModelParams<T>& p) {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for_each_param(p, [&](const char* name, Tensor<T>& t) { out.emplace_back(name, t); });
  return out;
}

template <typename T>
std::uint64_t parameter_count(ModelParams<T>& p) {
  std::uint64_t n = 0;
  for_each_param(p, [&](const char*, Tensor<T>& t) { n += t.numel(); });
  return n;
}

template <typename T>
ModelParams<T> init_model_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams<T> p;
  p.block = init_block_params<T>(cfg.block, Rng::mix(cfg.seed, 1));
  p.spatial = init_spatial_params<T>(cfg.block, Rng::mix(cfg.seed, 2));
  Rng rng(Rng::mix(cfg.seed, 3));
  const std::size_t out = static_cast<std::size_t>(cfg.block.output_dim);
  const std::size_t k = static_cast<std::size_t>(cfg.num_classes);
  p.w_c = detail::uniform_fan_in<T>(rng, {out, k}, out);
  p.b_c = Tensor<T>::zeros({k});
  p.w_c.set_requires_grad(true);
  p.b_c.set_requires_grad(true);
  return p;
}

/// logits = W_c * fuse(spectral(x), spatial(x)) + b_c, with disabled paths
/// replaced by exact zero vectors.
template <typename T>
Tensor<T> model_forward(const Tensor<T>& x, ModelParams<T>& params, const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t n = x.extent(0);
  const std::size_t outd = static_cast<std::size_t>(cfg.block.output_dim);

  Tensor<T> y_spectral;
  if (cfg.forward_on || cfg.backward_on) {
    y_spectral =
        block_forward(x, params.block, cfg.block, cfg.forward_on, cfg.backward_on).y_combined;
  } else {
    y_spectral = Tensor<T>::zeros({n, outd});
  }
  Tensor<T> y_spatial =
      cfg.spatial_on ? spatial_forward(x, params.spatial) : Tensor<T>::zeros({n, outd});
  return linear(fuse(y_spectral, y_spatial), params.w_c, params.b_c);
}

/// Argmax over classes; ties break toward the lowest class index.
template <typename T>
std::vector<int> predict(const Tensor<T>& logits) {
  if (logits.ndim() != 2) throw ShapeError("predict: expected logits[N,K]");
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  std::vector<int> out(n);
  const auto& v = logits.values();
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (v[r * k + c] > v[r * k + best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

template <typename T>
std::vector<int> predict(const Tensor<T>& x, ModelParams<T>& params, const ModelConfig& cfg) {
  return predict(model_forward(x, params, cfg));
}

}  // namespace hsi
