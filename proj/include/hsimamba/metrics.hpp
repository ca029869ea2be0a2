#pragma once

#include <cstdint>
#include <vector>

#include "hsimamba/common.hpp"

namespace hsi {

/// Row = true class, column = predicted class.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int k) : num_classes(k), counts(static_cast<std::size_t>(k) * k, 0) {
    if (k < 1) throw ValueError("confusion matrix needs at least one class");
  }

  std::int64_t& at(int true_class, int predicted) {
    return counts[static_cast<std::size_t>(true_class) * num_classes + predicted];
  }
  std::int64_t at(int true_class, int predicted) const {
    return counts[static_cast<std::size_t>(true_class) * num_classes + predicted];
  }
  void add(int true_class, int predicted) { ++at(true_class, predicted); }

  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

struct Metrics {
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
};

/// OA = trace/total. AA averages per-class recall over classes that actually
/// occur. kappa = (OA - p_e) / (1 - p_e) with p_e the chance agreement; a
/// degenerate single-class matrix (p_e == 1) maps to kappa = 1 when perfect,
/// 0 otherwise.
Metrics compute_metrics(const ConfusionMatrix& cm);

}  // namespace hsi
