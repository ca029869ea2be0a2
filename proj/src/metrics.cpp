#include "hsimamba/metrics.hpp"

namespace hsi {

Metrics compute_metrics(const ConfusionMatrix& cm) {
  const int k = cm.num_classes;
  const double total = static_cast<double>(cm.total());
  if (total <= 0) throw ValueError("compute_metrics: empty confusion matrix");

  double trace = 0.0;
  std::vector<double> row_sum(k, 0.0), col_sum(k, 0.0);
  for (int t = 0; t < k; ++t) {
    for (int p = 0; p < k; ++p) {
      const double c = static_cast<double>(cm.at(t, p));
      row_sum[t] += c;
      col_sum[p] += c;
      if (t == p) trace += c;
    }
  }

  Metrics m;
  m.oa = trace / total;

  double recall_sum = 0.0;
  int present = 0;
  for (int t = 0; t < k; ++t) {
    if (row_sum[t] > 0) {
      recall_sum += static_cast<double>(cm.at(t, t)) / row_sum[t];
      ++present;
    }
  }
  m.aa = present > 0 ? recall_sum / present : 0.0;

  double pe = 0.0;
  for (int t = 0; t < k; ++t) pe += row_sum[t] * col_sum[t];
  pe /= total * total;
  if (pe >= 1.0) {
    m.kappa = (m.oa >= 1.0) ? 1.0 : 0.0;
  } else {
    m.kappa = (m.oa - pe) / (1.0 - pe);
  }
  return m;
}

}  // namespace hsi
