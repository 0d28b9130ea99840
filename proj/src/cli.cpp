// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#include "cil/cli.hpp"

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cil/experiment.hpp"

namespace cil {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct CommonFlags {
  std::string config;
  ConfigOverrides overrides;
  // CLI11 binds through concrete storage; optional<> is filled afterwards.
  std::uint64_t seed{0};
  bool seed_set{false};
  std::string out, loss, epsilon;
  double alpha{1.0};
  bool alpha_set{false};
  std::size_t memory_per_class{0};
  bool memory_set{false};
  std::size_t steps{0};
  bool steps_set{false};
};

void add_override_flags(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "experiment config file")
      ->required();
  cmd->add_option("--seed", flags.seed, "run seed override")
      ->each([&](const std::string&) { flags.seed_set = true; });
  cmd->add_option("--out", flags.out, "output directory override");
  cmd->add_option("--loss", flags.loss,
                  "loss mode override (standard|balanced|alpha|relaxed|"
                  "rescaled|meta)");
  cmd->add_option("--alpha", flags.alpha, "alpha override")
      ->each([&](const std::string&) { flags.alpha_set = true; });
  cmd->add_option("--epsilon", flags.epsilon,
                  "epsilon override, absolute or percentage form (e.g. 0.2%)");
  cmd->add_option("--memory-per-class", flags.memory_per_class,
                  "growing-memory size override")
      ->each([&](const std::string&) { flags.memory_set = true; });
  cmd->add_option("--steps", flags.steps, "incremental step count override")
      ->each([&](const std::string&) { flags.steps_set = true; });
}

ExperimentConfig resolve_config(const CommonFlags& flags) {
  ExperimentConfig cfg = parse_config_file(flags.config);
  ConfigOverrides o;
  if (flags.seed_set) o.seed = flags.seed;
  if (!flags.out.empty()) o.out = flags.out;
  if (!flags.loss.empty()) o.loss_mode = flags.loss;
  if (flags.alpha_set) o.alpha = flags.alpha;
  if (!flags.epsilon.empty()) o.epsilon = flags.epsilon;
  if (flags.memory_set) o.memory_per_class = flags.memory_per_class;
  if (flags.steps_set) o.steps = flags.steps;
  apply_overrides(cfg, o);
  return cfg;
}

void print_run_summary(const RunRecord& record) {
  for (const auto& s : record.steps) {
    std::printf(
        "step %d  classes %zu  top1 %s%%  top5 %s%%  base %s%%  newest %s%%\n",
        s.step, s.num_classes, format_percent(s.top1.percent()).c_str(),
        format_percent(s.top5.percent()).c_str(),
        format_percent(s.base_group.percent()).c_str(),
        format_percent(s.newest_group.percent()).c_str());
    if (!s.alpha_trajectory.empty())
      std::printf("         final alpha %.4f over %zu updates\n",
                  s.alpha_trajectory.back(), s.alpha_trajectory.size());
  }
  std::printf("average incremental accuracy: %s%%\n",
              format_percent(record.average_incremental_accuracy).c_str());
}

int cmd_run(const CommonFlags& flags) {
  ExperimentConfig cfg = resolve_config(flags);
  std::optional<std::filesystem::path> out;
  if (!cfg.run.out.empty()) out = cfg.run.out;
  RunRecord record = run_experiment(cfg, out);
  print_run_summary(record);
  if (out) std::printf("outputs written to %s\n", out->string().c_str());
  return kExitOk;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::string tok;
  std::istringstream is(text);
  while (std::getline(is, tok, ',')) {
    try {
      seeds.push_back(std::stoull(tok));
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + tok + "'");
    }
  }
  return seeds;
}

int cmd_compare(const std::string& config_a, const std::string& config_b,
                const std::string& seeds_text, const std::string& out) {
  const ExperimentConfig a = parse_config_file(config_a);
  const ExperimentConfig b = parse_config_file(config_b);
  const auto seeds = parse_seed_list(seeds_text);
  CompareResult result = compare_experiments(a, b, seeds);
  std::printf("%-12s %-12s %-12s %-12s\n", "seed", "A", "B", "B-A");
  for (const auto& row : result.rows)
    std::printf("%-12llu %-12s %-12s %-+12.2f\n",
                static_cast<unsigned long long>(row.seed),
                format_percent(row.a_accuracy).c_str(),
                format_percent(row.b_accuracy).c_str(), row.difference());
  std::printf("%-12s %-12s %-12s %-+12.2f\n", "mean",
              format_percent(result.a_mean).c_str(),
              format_percent(result.b_mean).c_str(), result.mean_difference());
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    std::ofstream os(std::filesystem::path(out) / "comparison.json",
                     std::ios::trunc);
    os << result.to_json().dump(2) << '\n';
  }
  return kExitOk;
}

int cmd_sweep(const CommonFlags& flags, const std::string& field_name,
              const std::string& values_text, const std::string& out) {
  ExperimentConfig cfg = resolve_config(flags);
  SweepField field;
  if (field_name == "alpha")
    field = SweepField::alpha;
  else if (field_name == "epsilon")
    field = SweepField::epsilon;
  else
    throw ConfigError("sweep field must be alpha or epsilon");
  std::vector<double> values;
  {
    std::istringstream is(values_text);
    std::string tok;
    while (std::getline(is, tok, ',')) {
      try {
        values.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw ConfigError("bad sweep value '" + tok + "'");
      }
    }
  }
  SweepResult result = sweep_experiment(cfg, field, values);
  std::printf("%-10s %-20s %-22s %-20s\n", field_name.c_str(),
              "final base accuracy", "final overall accuracy",
              "average inc. accuracy");
  for (const auto& row : result.rows)
    std::printf("%-10g %-20s %-22s %-20s\n", row.value,
                format_percent(row.final_base_accuracy).c_str(),
                format_percent(row.final_overall_accuracy).c_str(),
                format_percent(row.average_incremental_accuracy).c_str());
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    std::ofstream os(std::filesystem::path(out) / "sweep.json",
                     std::ios::trunc);
    os << result.to_json().dump(2) << '\n';
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"class-incremental learning experiments"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  CLI::App* run_cmd = app.add_subcommand("run", "execute one experiment");
  add_override_flags(run_cmd, run_flags);

  std::string cmp_a, cmp_b, cmp_seeds, cmp_out;
  CLI::App* cmp_cmd =
      app.add_subcommand("compare", "paired-seed comparison of two configs");
  cmp_cmd->add_option("--config-a", cmp_a, "first config")->required();
  cmp_cmd->add_option("--config-b", cmp_b, "second config")->required();
  cmp_cmd->add_option("--seeds", cmp_seeds, "comma-separated seeds")
      ->required();
  cmp_cmd->add_option("--out", cmp_out, "directory for comparison.json");

  CommonFlags sweep_flags;
  std::string sweep_field, sweep_values, sweep_out;
  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "one run per value of alpha or epsilon");
  add_override_flags(sweep_cmd, sweep_flags);
  sweep_cmd->add_option("--field", sweep_field, "alpha or epsilon")->required();
  sweep_cmd->add_option("--values", sweep_values, "comma-separated values")
      ->required();
  sweep_cmd->add_option("--sweep-out", sweep_out, "directory for sweep.json");

  std::string emit_record, emit_out;
  CLI::App* emit_cmd = app.add_subcommand(
      "emit-confusion", "re-render confusion CSVs from a run record");
  emit_cmd->add_option("--record", emit_record, "run_record.json path")
      ->required();
  emit_cmd->add_option("--out", emit_out, "output directory")->required();

  try {
    app.parse(argc, argv);
    if (run_cmd->parsed()) return cmd_run(run_flags);
    if (cmp_cmd->parsed()) return cmd_compare(cmp_a, cmp_b, cmp_seeds, cmp_out);
    if (sweep_cmd->parsed())
      return cmd_sweep(sweep_flags, sweep_field, sweep_values, sweep_out);
    if (emit_cmd->parsed()) {
      emit_confusion(emit_record, emit_out);
      return kExitOk;
    }
    return kExitConfig;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    std::cerr << "partial outputs, if any, are incomplete\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    // Shape/argument/label errors from validation surface as config errors.
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FormatError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace cil
