#pragma once

// Spatial branch: the band-averaged patch runs through a 3x3 convolution,
// a SiLU gate and a global average pool, then projects to the block output
// width so the two branches fuse by addition. Consuming the band mean makes
// the branch invariant to band order by construction.

#include <cstdint>
#include <vector>

#include "hsimamba/block.hpp"
#include "hsimamba/common.hpp"
#include "hsimamba/tensor.hpp"

namespace hsi {

template <typename T>
struct SpatialParams {
  Tensor<T> kernel;  // [S, 1, 3, 3]
  Tensor<T> bias;    // [S]
  Tensor<T> w_sp;    // [S, out]
  Tensor<T> b_sp;    // [out]
};

inline std::size_t spatial_channels(const BlockConfig& cfg) {
  return static_cast<std::size_t>((cfg.hidden_dim + 1) / 2);
}

template <typename T, typename Fn>
void for_each_param(SpatialParams<T>& p, Fn&& fn) {
  fn("spatial.kernel", p.kernel);
  fn("spatial.bias", p.bias);
  fn("spatial.w", p.w_sp);
  fn("spatial.b", p.b_sp);
}

template <typename T>
SpatialParams<T> init_spatial_params(const BlockConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t s = spatial_channels(cfg);
  const std::size_t out = static_cast<std::size_t>(cfg.output_dim);
  SpatialParams<T> p;
  p.kernel = detail::uniform_fan_in<T>(rng, {s, 1, 3, 3}, 9);
  p.bias = Tensor<T>::zeros({s});
  p.w_sp = detail::uniform_fan_in<T>(rng, {s, out}, s);
  p.b_sp = Tensor<T>::zeros({out});
  for_each_param(p, [](const char*, Tensor<T>& t) { t.set_requires_grad(true); });
  return p;
}

/// band mean -> 3x3 conv (zero pad 1) -> SiLU -> global average pool -> linear.
template <typename T>
Tensor<T> spatial_forward(const Tensor<T>& x, SpatialParams<T>& params) {
  if (x.ndim() != 4) throw ShapeError("spatial_forward: expected x[N,p,p,CH]");
  const std::size_t n = x.extent(0), p = x.extent(1);
  if (x.extent(2) != p) throw ShapeError("spatial_forward: patch must be square");
  if (p < 1) throw ValueError("spatial_forward: empty patch");

  auto band_mean = mean(x, 3);                       // [N, p, p]
  auto planes = reshape(band_mean, {n, 1, p, p});
  auto conv = silu(conv2d(planes, params.kernel, params.bias));  // [N, S, p, p]
  auto pooled = mean(mean(conv, 3), 2);              // [N, S]
  return linear(pooled, params.w_sp, params.b_sp);   // [N, out]
}

/// Branch fusion is an elementwise sum; feeding zeros for one side is
/// exactly the "branch disabled" ablation.
template <typename T>
Tensor<T> fuse(const Tensor<T>& y_spectral, const Tensor<T>& y_spatial) {
  if (y_spectral.shape() != y_spatial.shape()) {
    throw ShapeError("fuse: branch outputs must have identical shapes");
  }
  return add(y_spectral, y_spatial);
}

}  // namespace hsi
