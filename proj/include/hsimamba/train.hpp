#pragma once

// Training harness: Adam with bias correction, epoch loop with seeded
// shuffles, deterministic 6x augmentation expansion, and batched evaluation
// into a confusion matrix.

#include <chrono>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hsimamba/common.hpp"
#include "hsimamba/data.hpp"
#include "hsimamba/metrics.hpp"
#include "hsimamba/model.hpp"
#include "hsimamba/report.hpp"
#include "hsimamba/tensor.hpp"

namespace hsi {

struct TrainConfig {
  double lr = 5e-4;
  int batch_size = 32;
  int epochs = 50;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  bool augment = true;

  void validate() const {
    if (!(lr > 0)) throw ValueError("learning rate must be positive");
    if (batch_size < 1) throw ValueError("batch size must be at least 1");
    if (epochs < 1) throw ValueError("epoch count must be at least 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& cfg) {
  j = nlohmann::json{{"lr", cfg.lr},       {"batch_size", cfg.batch_size},
                     {"epochs", cfg.epochs}, {"beta1", cfg.beta1},
                     {"beta2", cfg.beta2},   {"eps", cfg.eps},
                     {"seed", cfg.seed},     {"augment", cfg.augment}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& cfg) {
  j.at("lr").get_to(cfg.lr);
  j.at("batch_size").get_to(cfg.batch_size);
  j.at("epochs").get_to(cfg.epochs);
  j.at("beta1").get_to(cfg.beta1);
  j.at("beta2").get_to(cfg.beta2);
  j.at("eps").get_to(cfg.eps);
  j.at("seed").get_to(cfg.seed);
  j.at("augment").get_to(cfg.augment);
}

template <typename T>
struct AdamState {
  int t = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  template <typename Params>
  static AdamState init(Params& params) {
    AdamState st;
    for_each_param(params, [&](const char*, Tensor<T>& p) {
      st.m.emplace_back(p.numel(), T(0));
      st.v.emplace_back(p.numel(), T(0));
    });
    return st;
  }
};

/// One bias-corrected Adam update over every parameter that received a
/// gradient; parameters with no (or zero) gradient are left untouched.
template <typename T, typename Params>
void adam_step(Params& params, AdamState<T>& state, const TrainConfig& cfg) {
  state.t += 1;
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T corr1 = T(1) - static_cast<T>(std::pow(cfg.beta1, state.t));
  const T corr2 = T(1) - static_cast<T>(std::pow(cfg.beta2, state.t));
  const T lr = static_cast<T>(cfg.lr);
  const T eps = static_cast<T>(cfg.eps);

  std::size_t idx = 0;
  for_each_param(params, [&](const char*, Tensor<T>& p) {
    auto& m = state.m[idx];
    auto& v = state.v[idx];
    ++idx;
    if (!p.has_grad()) return;
    auto g = p.grad();
    auto w = p.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T mhat = m[i] / corr1;
      const T vhat = v[i] / corr2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  });
}

/// Stacks patches into a [N, p, p, CH] batch plus 0-based labels.
template <typename T>
std::pair<Tensor<T>, std::vector<int>> make_batch(const std::vector<const Patch*>& patches) {
  if (patches.empty()) throw ValueError("make_batch: empty batch");
  const int p = patches.front()->size;
  const int ch = patches.front()->bands;
  std::vector<T> data;
  data.reserve(patches.size() * patches.front()->values.size());
  std::vector<int> labels;
  labels.reserve(patches.size());
  for (const Patch* patch : patches) {
    if (patch->size != p || patch->bands != ch) {
      throw ShapeError("make_batch: mixed patch shapes");
    }
    for (float v : patch->values) data.push_back(static_cast<T>(v));
    labels.push_back(patch->label);
  }
  auto x = Tensor<T>::from_data({patches.size(), static_cast<std::size_t>(p),
                                 static_cast<std::size_t>(p), static_cast<std::size_t>(ch)},
                                std::move(data));
  return {x, std::move(labels)};
}

/// Deterministic 6x expansion: original plus the five augmentation ops.
inline std::vector<Patch> expand_with_augmentations(const std::vector<Patch>& base) {
  static constexpr AugmentOp kOps[] = {AugmentOp::kRot45, AugmentOp::kRot90, AugmentOp::kRot135,
                                       AugmentOp::kFlipH, AugmentOp::kFlipV};
  std::vector<Patch> out;
  out.reserve(base.size() * 6);
  for (const auto& patch : base) {
    out.push_back(patch);
    for (AugmentOp op : kOps) out.push_back(augment(patch, op));
  }
  return out;
}

/// Batched inference over `patches` accumulated into a confusion matrix.
/// Every sample is counted exactly once.
template <typename T>
ConfusionMatrix evaluate_model(ModelParams<T>& params, const ModelConfig& cfg,
                               const std::vector<Patch>& patches, int batch_size) {
  ConfusionMatrix cm(cfg.num_classes);
  for (std::size_t start = 0; start < patches.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(patches.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const Patch*> batch;
    batch.reserve(stop - start);
    for (std::size_t i = start; i < stop; ++i) batch.push_back(&patches[i]);
    auto [x, labels] = make_batch<T>(batch);
    auto preds = predict(model_forward(x, params, cfg));
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= cfg.num_classes) {
        throw ValueError("evaluate_model: sample with label outside [0,K)");
      }
      cm.add(labels[i], preds[i]);
    }
  }
  return cm;
}

/// Full protocol: gather train patches, optionally expand with the five
/// augmentations, run `epochs` passes of shuffled mini-batches under Adam,
/// then evaluate the test split. Aborts with DivergenceError if the loss
/// leaves the finite range.
template <typename T>
std::pair<ModelParams<T>, RunReport> train_model(const ModelConfig& model_cfg,
                                                 const HsiCube& cube,
                                                 const SplitManifest& manifest,
                                                 const TrainConfig& train_cfg) {
  model_cfg.validate();
  train_cfg.validate();

  std::vector<Patch> train_patches =
      gather_patches(cube, manifest, SplitTag::kTrain, model_cfg.block.spatial_dim);
  if (train_patches.empty()) throw ValueError("train_model: empty train split");
  if (train_cfg.augment) train_patches = expand_with_augmentations(train_patches);

  ModelParams<T> params = init_model_params<T>(model_cfg);
  AdamState<T> adam = AdamState<T>::init(params);

  RunReport report;
  report.config_echo = {{"model", model_cfg}, {"train", train_cfg}};
  MemoryMeter::reset_peak();

  const auto t_train0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(train_patches.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    Rng shuffle_rng(Rng::mix(train_cfg.seed, static_cast<std::uint64_t>(epoch) + 1));
    shuffle_rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(train_cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(train_cfg.batch_size));
      std::vector<const Patch*> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&train_patches[order[i]]);

      double batch_loss = 0.0;
      try {
        Tape<T> tape;
        auto [x, labels] = make_batch<T>(batch);
        auto logits = model_forward(x, params, model_cfg);
        auto loss = softmax_cross_entropy(logits, labels);
        batch_loss = static_cast<double>(loss.item());
        for_each_param(params, [](const char*, Tensor<T>& p) { p.zero_grad(); });
        tape.backward(loss);
      } catch (const NumericsError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch + 1) + ": " +
                              e.what());
      }
      adam_step(params, adam, train_cfg);
      loss_sum += batch_loss * static_cast<double>(stop - start);
      seen += stop - start;
    }
    report.epoch_loss.push_back(loss_sum / static_cast<double>(seen));
  }
  const auto t_train1 = std::chrono::steady_clock::now();
  report.train_seconds = std::chrono::duration<double>(t_train1 - t_train0).count();

  std::vector<Patch> test_patches =
      gather_patches(cube, manifest, SplitTag::kTest, model_cfg.block.spatial_dim);
  const auto t_test0 = std::chrono::steady_clock::now();
  if (!test_patches.empty()) {
    report.confusion = evaluate_model(params, model_cfg, test_patches, train_cfg.batch_size);
    report.metrics = compute_metrics(report.confusion);
  } else {
    report.confusion = ConfusionMatrix(model_cfg.num_classes);
  }
  const auto t_test1 = std::chrono::steady_clock::now();
  report.test_seconds = std::chrono::duration<double>(t_test1 - t_test0).count();
  report.peak_memory_mb = MemoryMeter::peak_mb();
  return {std::move(params), std::move(report)};
}

}  // namespace hsi
