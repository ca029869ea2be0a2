// Command-line entry point. Subcommands: synth, train, eval, gradcheck,
// bench, sweep-ablation. Exit codes: 0 success, 1 failed check, 2 validation
// error, 3 divergence, 4 I/O error.

#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hsimamba/common.hpp"
#include "hsimamba/workflows.hpp"

namespace {

std::string scalar_to_string(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

/// Applies a flat JSON object of option defaults to a subcommand: each key
/// names a long option, and values take effect only for options not given
/// on the command line.
void apply_json_defaults(CLI::App* cmd, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw hsi::IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw hsi::IoError("config file is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw hsi::ValueError("config file must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (opt == nullptr) {
      throw hsi::ValueError("config key '" + key + "' does not name an option of this command");
    }
    if (opt->count() > 0) continue;  // command line wins
    if (value.is_array()) {
      for (const auto& v : value) opt->add_result(scalar_to_string(v));
    } else {
      opt->add_result(scalar_to_string(value));
    }
    opt->run_callback();
  }
}

/// Adds the --config option and wires the merge to run before the command
/// body, after parsing.
std::shared_ptr<std::string> add_config_option(CLI::App* cmd) {
  auto path = std::make_shared<std::string>();
  cmd->add_option("--config", *path, "JSON file with option defaults (flags override)");
  return path;
}

void parse_ablation(const std::string& spec, hsi::workflows::TrainOptions& opts) {
  opts.forward_on = opts.backward_on = opts.spatial_on = false;
  if (spec == "none") {
    throw hsi::ValueError("--ablation none disables every path; at least one must stay enabled");
  }
  std::stringstream ss(spec);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (token == "fwd" || token == "forward") {
      opts.forward_on = true;
    } else if (token == "bwd" || token == "backward") {
      opts.backward_on = true;
    } else if (token == "spatial") {
      opts.spatial_on = true;
    } else if (!token.empty()) {
      throw hsi::ValueError("unknown ablation path '" + token + "' (expected fwd,bwd,spatial)");
    }
  }
  if (!opts.forward_on && !opts.backward_on && !opts.spatial_on) {
    throw hsi::ValueError("--ablation must keep at least one path enabled");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bidirectional spectral classifier for hyperspectral patches"};
  app.require_subcommand(1);
  std::function<int()> action;

  // ---- synth ----------------------------------------------------------
  auto synth_opts = std::make_shared<hsi::workflows::SynthOptions>();
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic labeled scene");
  synth->add_option("--out", synth_opts->out_path, "Output cube file")->required();
  synth->add_option("--height", synth_opts->height, "Scene height");
  synth->add_option("--width", synth_opts->width, "Scene width");
  synth->add_option("--bands", synth_opts->bands, "Spectral bands");
  synth->add_option("--classes", synth_opts->classes, "Number of classes (<= 16)");
  synth->add_option("--sigma", synth_opts->sigma, "Per-band Gaussian noise");
  synth->add_option("--seed", synth_opts->seed, "Generator seed");
  auto synth_config = add_config_option(synth);
  synth->callback([&action, synth_opts, synth, synth_config]() {
    action = [synth_opts, synth, synth_config]() {
      if (!synth_config->empty()) apply_json_defaults(synth, *synth_config);
      hsi::workflows::run_synth(*synth_opts);
      std::cout << "wrote " << synth_opts->out_path << "\n";
      return 0;
    };
  });

  // ---- train ----------------------------------------------------------
  auto train_opts = std::make_shared<hsi::workflows::TrainOptions>();
  auto ablation_spec = std::make_shared<std::string>("fwd,bwd,spatial");
  CLI::App* train = app.add_subcommand("train", "Train a model on a cube");
  train->add_option("--cube", train_opts->cube_path, "Input cube file")->required();
  train->add_option("--patch", train_opts->patch, "Patch side (odd)");
  train->add_option("--hidden", train_opts->hidden, "Hidden width");
  train->add_option("--output-dim", train_opts->output_dim, "Block output width (default hidden)");
  train->add_option("--epochs", train_opts->epochs, "Training epochs");
  train->add_option("--lr", train_opts->lr, "Learning rate");
  train->add_option("--batch", train_opts->batch, "Mini-batch size");
  train->add_option("--seed", train_opts->seed, "Training seed");
  train->add_option("--ablation", *ablation_spec, "Enabled paths, comma list of fwd,bwd,spatial");
  train->add_option("--sequence-mode", train_opts->sequence_mode, "spectral | literal");
  train->add_option("--reverse-mode", train_opts->reverse_mode, "flip | learned");
  train->add_option("--normalize", train_opts->normalize, "none | minmax | zscore");
  train->add_option("--precision", train_opts->precision, "f32 | f64");
  train->add_option("--augment", train_opts->augment, "Expand the train set 6x");
  train->add_option("--train-per-class", train_opts->train_per_class,
                    "Train pixels per class when the cube has no split plane");
  train->add_option("--split-seed", train_opts->split_seed, "Seed for the stratified split");
  train->add_option("--out-checkpoint", train_opts->checkpoint_out, "Checkpoint output path");
  train->add_option("--out-report", train_opts->report_out, "Run report output path");
  train->add_option("--out-confusion", train_opts->confusion_out, "Confusion matrix CSV path");
  auto train_config = add_config_option(train);
  train->callback([&action, train_opts, ablation_spec, train, train_config]() {
    action = [train_opts, ablation_spec, train, train_config]() {
      if (!train_config->empty()) apply_json_defaults(train, *train_config);
      parse_ablation(*ablation_spec, *train_opts);
      auto report = hsi::workflows::run_train(*train_opts);
      std::cout << "final loss " << report.epoch_loss.back() << ", test OA " << report.metrics.oa
                << ", AA " << report.metrics.aa << ", kappa " << report.metrics.kappa << "\n";
      return 0;
    };
  });

  // ---- eval -----------------------------------------------------------
  auto eval_opts = std::make_shared<hsi::workflows::EvalOptions>();
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a cube");
  eval->add_option("--cube", eval_opts->cube_path, "Input cube file")->required();
  eval->add_option("--checkpoint", eval_opts->checkpoint_path, "Checkpoint file")->required();
  eval->add_option("--batch", eval_opts->batch, "Evaluation batch size");
  eval->add_option("--out-report", eval_opts->report_out, "Run report output path");
  eval->add_option("--out-confusion", eval_opts->confusion_out, "Confusion matrix CSV path");
  auto eval_config = add_config_option(eval);
  eval->callback([&action, eval_opts, eval, eval_config]() {
    action = [eval_opts, eval, eval_config]() {
      if (!eval_config->empty()) apply_json_defaults(eval, *eval_config);
      auto report = hsi::workflows::run_eval(*eval_opts);
      std::cout << "test OA " << report.metrics.oa << ", AA " << report.metrics.aa << ", kappa "
                << report.metrics.kappa << "\n";
      return 0;
    };
  });

  // ---- gradcheck ------------------------------------------------------
  auto gc_opts = std::make_shared<hsi::workflows::GradcheckOptions>();
  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "Finite-difference check of every parameter group");
  gradcheck->add_option("--config", gc_opts->config_path,
                        "JSON model config (default: tiny built-in config)");
  gradcheck->add_option("--tolerance", gc_opts->tolerance, "Max relative error");
  gradcheck->add_option("--seed", gc_opts->seed, "Input seed");
  gradcheck->add_option("--batch", gc_opts->batch, "Probe batch size");
  gradcheck->callback([&action, gc_opts]() {
    action = [gc_opts]() {
      auto report = hsi::workflows::run_gradcheck(*gc_opts, std::cout);
      return report.passed(gc_opts->tolerance) ? 0 : 1;
    };
  });

  // ---- bench ----------------------------------------------------------
  auto bench_opts = std::make_shared<hsi::workflows::BenchOptions>();
  CLI::App* bench = app.add_subcommand("bench", "Patch-size sweep: accuracy, memory, timing");
  bench->add_option("--cube", bench_opts->cube_path, "Input cube file")->required();
  bench->add_option("--patch-sweep", bench_opts->patch_sweep, "Patch sizes to sweep")
      ->delimiter(',');
  bench->add_option("--out-csv", bench_opts->out_csv, "CSV output path")->required();
  bench->add_option("--out-profile", bench_opts->out_profile, "JSON complexity profile path");
  bench->add_option("--hidden", bench_opts->hidden, "Hidden width");
  bench->add_option("--epochs", bench_opts->epochs, "Epochs per sweep point");
  bench->add_option("--batch", bench_opts->batch, "Mini-batch size");
  bench->add_option("--lr", bench_opts->lr, "Learning rate");
  bench->add_option("--seed", bench_opts->seed, "Seed");
  bench->add_option("--train-per-class", bench_opts->train_per_class, "Train pixels per class");
  bench->add_option("--split-seed", bench_opts->split_seed, "Split seed");
  bench->add_option("--bench-samples", bench_opts->bench_samples, "Inference samples per run");
  bench->add_option("--precision", bench_opts->precision, "f32 | f64");
  auto bench_config = add_config_option(bench);
  bench->callback([&action, bench_opts, bench, bench_config]() {
    action = [bench_opts, bench, bench_config]() {
      if (!bench_config->empty()) apply_json_defaults(bench, *bench_config);
      auto rows = hsi::workflows::run_bench(*bench_opts);
      for (const auto& r : rows) {
        std::cout << "patch " << r.patch << ": OA " << r.oa << ", " << r.memory_mb << " MB, train "
                  << r.train_s << " s, test " << r.test_s << " s\n";
      }
      return 0;
    };
  });

  // ---- sweep-ablation -------------------------------------------------
  auto abl_opts = std::make_shared<hsi::workflows::AblationOptions>();
  CLI::App* ablation = app.add_subcommand("sweep-ablation", "Train the five path patterns");
  ablation->add_option("--cube", abl_opts->cube_path, "Input cube file")->required();
  ablation->add_option("--out-csv", abl_opts->out_csv, "CSV output path")->required();
  ablation->add_option("--patch", abl_opts->patch, "Patch side (odd)");
  ablation->add_option("--hidden", abl_opts->hidden, "Hidden width");
  ablation->add_option("--epochs", abl_opts->epochs, "Epochs per pattern");
  ablation->add_option("--batch", abl_opts->batch, "Mini-batch size");
  ablation->add_option("--lr", abl_opts->lr, "Learning rate");
  ablation->add_option("--seed", abl_opts->seed, "Seed");
  ablation->add_option("--train-per-class", abl_opts->train_per_class, "Train pixels per class");
  ablation->add_option("--split-seed", abl_opts->split_seed, "Split seed");
  ablation->add_option("--precision", abl_opts->precision, "f32 | f64");
  auto ablation_config = add_config_option(ablation);
  ablation->callback([&action, abl_opts, ablation, ablation_config]() {
    action = [abl_opts, ablation, ablation_config]() {
      if (!ablation_config->empty()) apply_json_defaults(ablation, *ablation_config);
      auto rows = hsi::workflows::run_ablation(*abl_opts);
      for (const auto& r : rows) {
        std::cout << r.method << " (fwd=" << r.forward_on << " bwd=" << r.backward_on
                  << " spatial=" << r.spatial_on << "): OA " << r.oa << ", AA " << r.aa
                  << ", kappa " << r.kappa << "\n";
      }
      return 0;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    return action ? action() : 2;
  } catch (const hsi::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const hsi::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const hsi::NumericsError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const hsi::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
