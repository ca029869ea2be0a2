#pragma once

// File-to-file implementations of the CLI subcommands. The CLI binary parses
// flags into these option structs; the acceptance suite drives the same
// functions directly.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hsimamba/gradcheck.hpp"
#include "hsimamba/report.hpp"

namespace hsi::workflows {

struct SynthOptions {
  std::string out_path;
  int height = 64;
  int width = 64;
  int bands = 20;
  int classes = 4;
  double sigma = 0.05;
  std::uint64_t seed = 0;
};

void run_synth(const SynthOptions& opts);

struct TrainOptions {
  std::string cube_path;
  int patch = 7;
  int hidden = 32;
  int output_dim = 0;  // 0: same as hidden
  int epochs = 50;
  double lr = 5e-4;
  int batch = 32;
  std::uint64_t seed = 0;
  bool forward_on = true;
  bool backward_on = true;
  bool spatial_on = true;
  std::string sequence_mode = "spectral";
  std::string reverse_mode = "flip";
  std::string normalize = "minmax";
  std::string precision = "f32";
  bool augment = true;
  int train_per_class = 50;       // used only when the cube has no split plane
  std::uint64_t split_seed = 1;
  std::string checkpoint_out;
  std::string report_out;
  std::string confusion_out;  // optional CSV
};

RunReport run_train(const TrainOptions& opts);

struct EvalOptions {
  std::string cube_path;
  std::string checkpoint_path;
  std::string report_out;
  std::string confusion_out;  // optional CSV
  int batch = 32;
};

RunReport run_eval(const EvalOptions& opts);

struct GradcheckOptions {
  std::string config_path;  // optional JSON with the model config to check
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  int batch = 2;
};

/// Prints one pass/fail line per parameter group; returns the report.
GradCheckReport run_gradcheck(const GradcheckOptions& opts, std::ostream& out);

struct BenchOptions {
  std::string cube_path;
  std::vector<int> patch_sweep{1, 3, 5, 7, 9, 11, 13, 15};
  std::string out_csv;
  std::string out_profile;  // optional JSON complexity profile
  int hidden = 16;
  int epochs = 3;
  int batch = 32;
  double lr = 5e-4;
  std::uint64_t seed = 0;
  int train_per_class = 10;
  std::uint64_t split_seed = 1;
  int bench_samples = 128;
  std::string precision = "f32";
};

struct BenchRow {
  int patch = 0;
  double oa = 0.0;
  double memory_mb = 0.0;
  double train_s = 0.0;
  double test_s = 0.0;
};

std::vector<BenchRow> run_bench(const BenchOptions& opts);

struct AblationOptions {
  std::string cube_path;
  std::string out_csv;
  int patch = 5;
  int hidden = 16;
  int epochs = 10;
  int batch = 32;
  double lr = 5e-4;
  std::uint64_t seed = 0;
  int train_per_class = 25;
  std::uint64_t split_seed = 1;
  std::string precision = "f32";
};

struct AblationRow {
  std::string method;
  bool forward_on = false;
  bool backward_on = false;
  bool spatial_on = false;
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
};

/// The five path patterns: all on, spatial off, backward off, forward off,
/// spatial only.
std::vector<AblationRow> run_ablation(const AblationOptions& opts);

}  // namespace hsi::workflows
