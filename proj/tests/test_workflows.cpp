#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "hsimamba/data.hpp"
#include "hsimamba/report.hpp"
#include "hsimamba/workflows.hpp"

namespace wf = hsi::workflows;

namespace {

struct TempCube {
  std::string path = "/tmp/workflows_cube.hsic";
  TempCube(int h = 20, int w = 20, int bands = 8, int classes = 3, std::uint64_t seed = 5) {
    auto cube = hsi::gen_synthetic(h, w, bands, classes, 0.05, seed);
    hsi::write_cube(cube, path);
  }
  ~TempCube() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("train workflow writes checkpoint and reproducible report") {
  TempCube cube;
  wf::TrainOptions opts;
  opts.cube_path = cube.path;
  opts.patch = 3;
  opts.hidden = 6;
  opts.epochs = 2;
  opts.train_per_class = 8;
  opts.checkpoint_out = "/tmp/workflows_ckpt.hsck";
  opts.report_out = "/tmp/workflows_report.json";

  auto report = wf::run_train(opts);
  CHECK(report.epoch_loss.size() == 2);
  CHECK(report.confusion.total() > 0);

  auto loaded = hsi::load_report(opts.report_out);
  CHECK(loaded.config_echo.at("data").at("cube") == cube.path);
  CHECK(loaded.config_echo.at("model").at("hidden_dim") == 6);
  CHECK(loaded.config_echo.at("train").at("epochs") == 2);
  CHECK(loaded.config_echo.at("precision") == "f32");

  wf::EvalOptions eopts;
  eopts.cube_path = cube.path;
  eopts.checkpoint_path = opts.checkpoint_out;
  auto eval_report = wf::run_eval(eopts);
  CHECK(eval_report.confusion.total() > 0);

  std::remove(opts.checkpoint_out.c_str());
  std::remove(opts.report_out.c_str());
}

TEST_CASE("eval without a split plane scores every labeled pixel") {
  TempCube cube(12, 12, 8, 3, 9);
  wf::TrainOptions topts;
  topts.cube_path = cube.path;
  topts.patch = 3;
  topts.hidden = 4;
  topts.epochs = 1;
  topts.train_per_class = 5;
  topts.augment = false;
  topts.checkpoint_out = "/tmp/workflows_eval_ckpt.hsck";
  wf::run_train(topts);

  wf::EvalOptions eopts;
  eopts.cube_path = cube.path;
  eopts.checkpoint_path = topts.checkpoint_out;
  auto report = wf::run_eval(eopts);
  CHECK(report.confusion.total() == 12 * 12);  // synthetic scenes label every pixel
  std::remove(topts.checkpoint_out.c_str());
}

TEST_CASE("gradcheck workflow prints one line per parameter group") {
  wf::GradcheckOptions opts;
  opts.tolerance = 1e-4;
  std::ostringstream out;
  auto report = wf::run_gradcheck(opts, out);
  CHECK(report.passed(opts.tolerance));

  std::istringstream lines(out.str());
  std::string line;
  std::size_t pass_lines = 0;
  bool overall_seen = false;
  while (std::getline(lines, line)) {
    if (line.rfind("[PASS]", 0) == 0) ++pass_lines;
    if (line.find("overall") != std::string::npos) overall_seen = true;
  }
  CHECK(pass_lines == report.per_param.size() + 1);
  CHECK(overall_seen);
}

TEST_CASE("literal sequence mode and learned reversal train end to end") {
  TempCube cube(14, 14, 8, 3, 21);
  wf::TrainOptions opts;
  opts.cube_path = cube.path;
  opts.patch = 3;
  opts.hidden = 4;
  opts.epochs = 1;
  opts.train_per_class = 6;
  opts.augment = false;
  opts.sequence_mode = "literal";
  opts.reverse_mode = "learned";
  opts.checkpoint_out = "/tmp/workflows_literal_ckpt.hsck";

  auto report = wf::run_train(opts);
  CHECK(std::isfinite(report.epoch_loss.at(0)));
  CHECK(report.config_echo.at("model").at("sequence_mode") == "literal");
  CHECK(report.config_echo.at("model").at("reverse_mode") == "learned");

  // The checkpoint restores and evaluates under the stored modes.
  wf::EvalOptions eopts;
  eopts.cube_path = cube.path;
  eopts.checkpoint_path = opts.checkpoint_out;
  auto eval_report = wf::run_eval(eopts);
  CHECK(eval_report.confusion.total() == 14 * 14);
  std::remove(opts.checkpoint_out.c_str());
}

TEST_CASE("workflow option validation") {
  CHECK_THROWS_AS(wf::run_synth(wf::SynthOptions{}), hsi::ValueError);
  CHECK_THROWS_AS(wf::run_train(wf::TrainOptions{}), hsi::ValueError);
  CHECK_THROWS_AS(wf::run_eval(wf::EvalOptions{}), hsi::ValueError);

  TempCube cube;
  wf::BenchOptions bopts;
  bopts.cube_path = cube.path;
  bopts.patch_sweep.clear();
  CHECK_THROWS_AS(wf::run_bench(bopts), hsi::ValueError);

  wf::TrainOptions bad_precision;
  bad_precision.cube_path = cube.path;
  bad_precision.precision = "f16";
  bad_precision.epochs = 1;
  bad_precision.train_per_class = 5;
  CHECK_THROWS_AS(wf::run_train(bad_precision), hsi::ValueError);
}
