#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "hsimamba/metrics.hpp"

namespace hsi {

/// Everything produced by one train/eval run. The config echo is sufficient
/// to reproduce the run exactly, and the stored metrics can be recomputed
/// from the stored confusion matrix.
struct RunReport {
  nlohmann::json config_echo;
  std::vector<double> epoch_loss;
  ConfusionMatrix confusion;
  Metrics metrics;
  double train_seconds = 0.0;
  double test_seconds = 0.0;
  double peak_memory_mb = 0.0;
};

nlohmann::json report_to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);

void save_report(const RunReport& report, const std::string& path);
RunReport load_report(const std::string& path);

/// Confusion matrix as CSV: header row of predicted classes, one row per
/// true class.
void write_confusion_csv(const ConfusionMatrix& cm, const std::string& path);

}  // namespace hsi
