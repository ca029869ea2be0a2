#pragma once

// Complexity accounting: closed-form parameter/FLOP estimators for the three
// architecture families, exact multiply-add counts taken from the tensor-op
// counters, and wall-clock / peak-memory probes.
//
// Counting convention: one fused multiply-add (or one add, divide, or
// transcendental evaluation) is one FLOP. Work that depends only on the
// parameters (the delta-bias matvec) is reported separately in
// `param_path_flops` so `flops` is exactly linear in the batch.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "hsimamba/common.hpp"
#include "hsimamba/model.hpp"
#include "hsimamba/train.hpp"

namespace hsi {

enum class ModelKind { kTransformer, kCnn, kHsiMamba };

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "transformer") return ModelKind::kTransformer;
  if (s == "cnn") return ModelKind::kCnn;
  if (s == "hsimamba") return ModelKind::kHsiMamba;
  throw ValueError("unknown model kind: " + s);
}

struct ComplexityProfile {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::uint64_t param_path_flops = 0;
  std::string params_class;
  std::string flops_class;
};

/// Closed-form leading-term counts with all numeric constants set to 1.
/// `k` is the kernel side (cnn only); `d` is the hidden width, kept in the
/// hsimamba flop term even though the asymptotic class treats it as a
/// model constant.
ComplexityProfile estimate(ModelKind kind, std::uint64_t b, std::uint64_t h, std::uint64_t w,
                           std::uint64_t c, std::uint64_t k, std::uint64_t d);

/// Exact counts for one forward pass of the configured model at the given
/// batch size: parameters by enumerating every declared array, FLOPs from
/// the op-level counters.
template <typename T = double>
ComplexityProfile count_actual(const ModelConfig& cfg, int batch) {
  cfg.validate();
  if (batch < 1) throw ValueError("count_actual: batch must be positive");
  ModelParams<T> params = init_model_params<T>(cfg);

  Rng rng(Rng::mix(cfg.seed, 0x5eed));
  const auto p = static_cast<std::size_t>(cfg.block.spatial_dim);
  const auto ch = static_cast<std::size_t>(cfg.block.num_bands);
  std::vector<T> values(static_cast<std::size_t>(batch) * p * p * ch);
  for (auto& v : values) v = static_cast<T>(rng.uniform(0.0, 1.0));
  auto x = Tensor<T>::from_data({static_cast<std::size_t>(batch), p, p, ch}, std::move(values));

  FlopCounter::reset();
  model_forward(x, params, cfg);

  ComplexityProfile prof;
  prof.params = parameter_count(params);
  prof.flops = FlopCounter::total();
  prof.param_path_flops = FlopCounter::param_total();
  prof.params_class = "O(C + HW)";
  prof.flops_class = "O(BHW · C)";
  return prof;
}

struct BenchResult {
  double seconds = 0.0;   // median of the measured runs
  double peak_mb = 0.0;
  int n_samples = 0;
  int batch_size = 0;
};

/// Inference timing over `n_samples` patches (cycled if needed): 3 warmup
/// runs are discarded, the median of 5 measured runs is reported.
template <typename T>
BenchResult bench_inference(ModelParams<T>& params, const ModelConfig& cfg,
                            const std::vector<Patch>& patches, int n_samples, int batch_size) {
  if (patches.empty()) throw ValueError("bench_inference: no patches supplied");
  if (n_samples < 1) throw ValueError("bench_inference: n_samples must be positive");

  std::vector<const Patch*> pool(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    pool[i] = &patches[static_cast<std::size_t>(i) % patches.size()];
  }

  auto run_once = [&]() {
    for (std::size_t start = 0; start < pool.size();
         start += static_cast<std::size_t>(batch_size)) {
      const std::size_t stop = std::min(pool.size(), start + static_cast<std::size_t>(batch_size));
      std::vector<const Patch*> batch(pool.begin() + static_cast<std::ptrdiff_t>(start),
                                      pool.begin() + static_cast<std::ptrdiff_t>(stop));
      auto [x, labels] = make_batch<T>(batch);
      model_forward(x, params, cfg);
    }
  };

  MemoryMeter::reset_peak();
  constexpr int kWarmups = 3;
  constexpr int kMeasured = 5;
  for (int i = 0; i < kWarmups; ++i) run_once();
  std::vector<double> times;
  times.reserve(kMeasured);
  for (int i = 0; i < kMeasured; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run_once();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());

  BenchResult out;
  out.seconds = times[times.size() / 2];
  out.peak_mb = MemoryMeter::peak_mb();
  out.n_samples = n_samples;
  out.batch_size = batch_size;
  return out;
}

}  // namespace hsi
