// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>

#include "cil/cli.hpp"
#include "cil/experiment.hpp"

using namespace cil;

namespace {

// Small and fast: 6 classes, base 3, 3 steps of one class.
const char* kTinyConfig = R"(
# tiny experiment
[dataset]
source = synthetic
classes = 6
dim = 8
train_per_class = 40
test_per_class = 16
spread = 0.5
data_seed = 3

[schedule]
base_classes = 3
incremental_steps = 3
order_seed = 2

[memory]
policy = growing
per_class = 5
selection = herding

[loss]
mode = balanced
epsilon = 0.2%

[train]
epochs = 3
batch_size = 16
lr = 0.1
lr_milestones = 2
lr_decay = 0.1
momentum = 0.9
weight_decay = 0.0002
hidden = 16

[run]
seed = 9
)";

std::filesystem::path write_temp_config(const std::string& name,
                                        const std::string& text) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream os(path, std::ios::trunc);
  os << text;
  return path;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Run the CLI with stdout/stderr parked on /dev/null so summaries and
// intentional error messages do not interleave with the test output.
int cli(std::vector<std::string> args) {
  std::vector<const char*> argv{"cil"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::fflush(stdout);
  std::fflush(stderr);
  const int saved_out = dup(1);
  const int saved_err = dup(2);
  const int devnull = open("/dev/null", O_WRONLY);
  dup2(devnull, 1);
  dup2(devnull, 2);
  const int rc = run_cli(static_cast<int>(argv.size()), argv.data());
  std::fflush(stdout);
  std::fflush(stderr);
  dup2(saved_out, 1);
  dup2(saved_err, 2);
  close(saved_out);
  close(saved_err);
  close(devnull);
  return rc;
}

}  // namespace

TEST_CASE("config files parse into typed fields") {
  ExperimentConfig cfg = parse_config_text(kTinyConfig);
  CHECK(cfg.dataset.classes == 6);
  CHECK(cfg.dataset.dim == 8);
  CHECK(cfg.schedule.base_classes == 3);
  CHECK(cfg.memory.per_class == 5);
  CHECK(cfg.loss.mode == "balanced");
  CHECK(cfg.loss.epsilon_value == doctest::Approx(0.2));
  CHECK(cfg.loss.epsilon_is_percent);
  CHECK(cfg.train.lr_milestones == std::vector<int>{2});
  CHECK(cfg.train.hidden == std::vector<std::size_t>{16});
  CHECK(cfg.run.seed == 9);
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK_THROWS_AS(parse_config_text("[loss]\nmodee = balanced\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[nope]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[train]\nepochs = zero\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[loss]\nmode = sharpened\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[loss]\nalpha = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("key_without_section = 1\n"), ConfigError);
}

TEST_CASE("epsilon accepts absolute and percentage forms") {
  CHECK(parse_epsilon("1.5") == std::pair<double, bool>{1.5, false});
  CHECK(parse_epsilon("0.2%") == std::pair<double, bool>{0.2, true});
  CHECK(parse_epsilon(" 2 % ") == std::pair<double, bool>{2.0, true});
  CHECK_THROWS_AS(parse_epsilon("-1"), ConfigError);
  CHECK_THROWS_AS(parse_epsilon("lots"), ConfigError);
}

TEST_CASE("percentage epsilon converts against the step's class count") {
  ExperimentConfig cfg = parse_config_text(kTinyConfig);
  cfg.loss.mode = "relaxed";
  LabeledDataset step;
  step.dim = 2;
  step.num_classes = 3;
  for (int k = 0; k < 100; ++k) {
    step.labels.push_back(2);
    step.samples.push_back(k);
    step.samples.push_back(k);
  }
  step.rebuild_index();
  // 0.2% of 100 samples per class
  CHECK(epsilon_for_step(cfg, step) == doctest::Approx(0.2).epsilon(1e-12));

  cfg.loss.epsilon_value = 1.25;
  cfg.loss.epsilon_is_percent = false;
  CHECK(epsilon_for_step(cfg, step) == 1.25);
}

TEST_CASE("overrides replace individual fields") {
  ExperimentConfig cfg = parse_config_text(kTinyConfig);
  ConfigOverrides o;
  o.seed = 123;
  o.loss_mode = "relaxed";
  o.epsilon = "2%";
  o.memory_per_class = 0;
  apply_overrides(cfg, o);
  CHECK(cfg.run.seed == 123);
  CHECK(cfg.loss.mode == "relaxed");
  CHECK(cfg.loss.epsilon_value == doctest::Approx(2.0));
  CHECK(cfg.memory.per_class == 0);

  ConfigOverrides bad;
  bad.loss_mode = "magic";
  CHECK_THROWS_AS(apply_overrides(cfg, bad), ConfigError);
}

TEST_CASE("a run produces one report per step") {
  ExperimentConfig cfg = parse_config_text(kTinyConfig);
  RunRecord record = run_experiment(cfg, std::nullopt);
  REQUIRE(record.steps.size() == 4);  // base + 3 increments
  for (std::size_t t = 0; t < record.steps.size(); ++t) {
    CHECK(record.steps[t].step == static_cast<int>(t));
    CHECK(record.steps[t].num_classes == 3 + t);
  }
  CHECK(record.average_incremental_accuracy > 0.0);
}

TEST_CASE("runs are byte-identical per seed") {
  ExperimentConfig cfg = parse_config_text(kTinyConfig);
  const auto out_a = std::filesystem::temp_directory_path() / "cil_run_a";
  const auto out_b = std::filesystem::temp_directory_path() / "cil_run_b";
  run_experiment(cfg, out_a);
  run_experiment(cfg, out_b);
  CHECK(slurp(out_a / "run_record.json") == slurp(out_b / "run_record.json"));
  CHECK(!slurp(out_a / "run_record.json").empty());
  std::filesystem::remove_all(out_a);
  std::filesystem::remove_all(out_b);
}

TEST_CASE("learned-alpha runs are byte-identical too") {
  ExperimentConfig cfg = parse_config_text(kTinyConfig);
  cfg.loss.mode = "meta";
  cfg.memory.per_class = 20;  // large enough for the validation split
  cfg.meta.alpha_lr = 0.2;
  cfg.meta.update_period = 3;
  const auto out_a = std::filesystem::temp_directory_path() / "cil_meta_a";
  const auto out_b = std::filesystem::temp_directory_path() / "cil_meta_b";
  run_experiment(cfg, out_a);
  run_experiment(cfg, out_b);
  const std::string a = slurp(out_a / "run_record.json");
  CHECK(a == slurp(out_b / "run_record.json"));
  CHECK(a.find("alpha_trajectory") != std::string::npos);
  std::filesystem::remove_all(out_a);
  std::filesystem::remove_all(out_b);
}

TEST_CASE("mitigation comparators run end to end") {
  ExperimentConfig cfg = parse_config_text(kTinyConfig);
  cfg.loss.mode = "rescaled";
  cfg.train.oversampling = "memory";
  cfg.train.finetune_epochs = 2;
  cfg.train.finetune_lr = 0.02;
  RunRecord rescaled = run_experiment(cfg, std::nullopt);
  CHECK(rescaled.steps.size() == 4);

  cfg.loss.mode = "standard";
  cfg.train.oversampling = "class";
  RunRecord oversampled = run_experiment(cfg, std::nullopt);
  CHECK(oversampled.steps.size() == 4);
}

TEST_CASE("run outputs land in the output directory") {
  ExperimentConfig cfg = parse_config_text(kTinyConfig);
  const auto out = std::filesystem::temp_directory_path() / "cil_run_out";
  run_experiment(cfg, out);
  CHECK(std::filesystem::exists(out / "run_record.json"));
  CHECK(std::filesystem::exists(out / "memory_state.txt"));
  CHECK(std::filesystem::exists(out / "timings.txt"));
  for (int t = 0; t <= 3; ++t) {
    CHECK(std::filesystem::exists(out / step_file_name("confusion", t, ".csv")));
    CHECK(std::filesystem::exists(
        out / step_file_name("confusion_log1p", t, ".csv")));
    CHECK(std::filesystem::exists(out / step_file_name("checkpoint", t, ".bin")));
  }

  // emit-confusion reproduces the CSVs from the record alone
  const auto redo = std::filesystem::temp_directory_path() / "cil_emit_out";
  emit_confusion(out / "run_record.json", redo);
  for (int t = 0; t <= 3; ++t)
    CHECK(slurp(redo / step_file_name("confusion", t, ".csv")) ==
          slurp(out / step_file_name("confusion", t, ".csv")));
  std::filesystem::remove_all(out);
  std::filesystem::remove_all(redo);
}

TEST_CASE("compare requires matching non-loss fields and seeds") {
  ExperimentConfig a = parse_config_text(kTinyConfig);
  ExperimentConfig b = a;
  CHECK_THROWS_AS(compare_experiments(a, b, {}), ArgumentError);

  b.dataset.dim = 12;
  try {
    compare_experiments(a, b, {1});
    FAIL("expected ArgumentError");
  } catch (const ArgumentError& e) {
    CHECK(std::string(e.what()).find("dataset.dim") != std::string::npos);
  }
}

TEST_CASE("identical configs compare to exactly zero difference") {
  ExperimentConfig a = parse_config_text(kTinyConfig);
  a.train.epochs = 2;
  CompareResult result = compare_experiments(a, a, {4, 5});
  for (const auto& row : result.rows) CHECK(row.difference() == 0.0);
  CHECK(result.mean_difference() == 0.0);
}

TEST_CASE("sweep validates its field against the loss mode") {
  ExperimentConfig cfg = parse_config_text(kTinyConfig);
  CHECK_THROWS_AS(sweep_experiment(cfg, SweepField::alpha, {0.5}),
                  ArgumentError);
  cfg.loss.mode = "alpha";
  CHECK_THROWS_AS(sweep_experiment(cfg, SweepField::alpha, {1.5}),
                  ArgumentError);
  CHECK_THROWS_AS(sweep_experiment(cfg, SweepField::alpha, {}), ArgumentError);
}

TEST_CASE("alpha sweep emits one row per value") {
  ExperimentConfig cfg = parse_config_text(kTinyConfig);
  cfg.loss.mode = "alpha";
  cfg.train.epochs = 2;
  SweepResult result =
      sweep_experiment(cfg, SweepField::alpha, {0.1, 0.25, 0.5, 1.0});
  REQUIRE(result.rows.size() == 4);
  const auto j = result.to_json();
  CHECK(j.at("rows").size() == 4);
  for (const auto& row : j.at("rows")) {
    CHECK(row.contains("final_base_accuracy"));
    CHECK(row.contains("final_overall_accuracy"));
    CHECK(row.contains("average_incremental_accuracy"));
  }
}

TEST_CASE("relaxed sweep at zero epsilon matches the balanced run bit-exactly") {
  // memoryless setting: with replayed old samples a zero floor would mask
  // their own labels, which the loss rejects
  ExperimentConfig cfg = parse_config_text(kTinyConfig);
  cfg.train.epochs = 2;
  cfg.memory.per_class = 0;
  cfg.loss.mode = "relaxed";
  SweepResult sweep = sweep_experiment(cfg, SweepField::epsilon, {0.0});

  ExperimentConfig balanced = cfg;
  balanced.loss.mode = "balanced";
  RunRecord reference = run_experiment(balanced, std::nullopt);
  // configs differ (mode, epsilon) but every numeric output must agree
  nlohmann::json a = to_json(sweep.rows[0].record);
  nlohmann::json b = to_json(reference);
  a.erase("config");
  b.erase("config");
  CHECK(a.dump() == b.dump());
}

TEST_CASE("cli run executes and reports config errors distinctly") {
  const auto cfg_path = write_temp_config("cil_cli_tiny.ini", kTinyConfig);
  const auto out = std::filesystem::temp_directory_path() / "cil_cli_out";
  CHECK(cli({"run", "--config", cfg_path.string(), "--out", out.string(),
             "--seed", "17"}) == 0);
  CHECK(std::filesystem::exists(out / "run_record.json"));

  RunRecord record = read_run_record(out / "run_record.json");
  CHECK(record.config.at("run").at("seed").get<std::uint64_t>() == 17);

  // invalid step divisibility: exit code 2 and the valid counts are named
  std::string broken(kTinyConfig);
  const auto pos = broken.find("incremental_steps = 3");
  broken.replace(pos, 21, "incremental_steps = 2");
  const auto bad_path = write_temp_config("cil_cli_bad.ini", broken);
  CHECK(cli({"run", "--config", bad_path.string()}) == 2);

  CHECK(cli({"run", "--config", "/nonexistent/config.ini"}) == 2);
  CHECK(cli({"run", "--config", cfg_path.string(), "--loss", "bogus"}) == 2);

  std::filesystem::remove(cfg_path);
  std::filesystem::remove(bad_path);
  std::filesystem::remove_all(out);
}

TEST_CASE("cli emit-confusion round-trips a record") {
  const auto cfg_path = write_temp_config("cil_cli_tiny2.ini", kTinyConfig);
  const auto out = std::filesystem::temp_directory_path() / "cil_cli_out2";
  const auto redo = std::filesystem::temp_directory_path() / "cil_cli_redo";
  REQUIRE(cli({"run", "--config", cfg_path.string(), "--out", out.string()}) ==
          0);
  CHECK(cli({"emit-confusion", "--record",
             (out / "run_record.json").string(), "--out", redo.string()}) == 0);
  CHECK(slurp(redo / step_file_name("confusion", 1, ".csv")) ==
        slurp(out / step_file_name("confusion", 1, ".csv")));
  std::filesystem::remove(cfg_path);
  std::filesystem::remove_all(out);
  std::filesystem::remove_all(redo);
}
