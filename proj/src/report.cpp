#include "hsimamba/report.hpp"

#include <fstream>

namespace hsi {

nlohmann::json report_to_json(const RunReport& report) {
  nlohmann::json j;
  j["config"] = report.config_echo;
  j["epoch_loss"] = report.epoch_loss;
  j["confusion"] = {{"num_classes", report.confusion.num_classes},
                    {"counts", report.confusion.counts}};
  j["oa"] = report.metrics.oa;
  j["aa"] = report.metrics.aa;
  j["kappa"] = report.metrics.kappa;
  j["train_seconds"] = report.train_seconds;
  j["test_seconds"] = report.test_seconds;
  j["peak_memory_mb"] = report.peak_memory_mb;
  return j;
}

RunReport report_from_json(const nlohmann::json& j) {
  RunReport r;
  r.config_echo = j.at("config");
  j.at("epoch_loss").get_to(r.epoch_loss);
  r.confusion.num_classes = j.at("confusion").at("num_classes").get<int>();
  j.at("confusion").at("counts").get_to(r.confusion.counts);
  if (r.confusion.counts.size() !=
      static_cast<std::size_t>(r.confusion.num_classes) * r.confusion.num_classes) {
    throw IoError("report confusion matrix has inconsistent size");
  }
  r.metrics.oa = j.at("oa").get<double>();
  r.metrics.aa = j.at("aa").get<double>();
  r.metrics.kappa = j.at("kappa").get<double>();
  r.train_seconds = j.at("train_seconds").get<double>();
  r.test_seconds = j.at("test_seconds").get<double>();
  r.peak_memory_mb = j.at("peak_memory_mb").get<double>();
  return r;
}

void save_report(const RunReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report: " + path);
  out << report_to_json(report).dump(2) << "\n";
}

RunReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed report " + path + ": " + e.what());
  }
  return report_from_json(j);
}

void write_confusion_csv(const ConfusionMatrix& cm, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write confusion csv: " + path);
  out << "true\\pred";
  for (int p = 0; p < cm.num_classes; ++p) out << "," << (p + 1);
  out << "\n";
  for (int t = 0; t < cm.num_classes; ++t) {
    out << (t + 1);
    for (int p = 0; p < cm.num_classes; ++p) out << "," << cm.at(t, p);
    out << "\n";
  }
}

}  // namespace hsi
