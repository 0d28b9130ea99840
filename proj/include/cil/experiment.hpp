// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cil/metrics.hpp"
#include "cil/replay_memory.hpp"
#include "cil/trainer.hpp"

namespace cil {

/// Full description of one experiment. Parsed from a sectioned key/value
/// config file; command-line flags override individual fields.
struct ExperimentConfig {
  struct Dataset {
    std::string source{"synthetic"};  // synthetic | csv | binary
    std::string train_path;
    std::string test_path;
    std::size_t classes{10};
    std::size_t dim{16};
    std::size_t train_per_class{100};
    std::size_t test_per_class{50};
    double spread{0.6};
    std::uint64_t data_seed{7};
  } dataset;

  struct Schedule {
    std::size_t base_classes{5};
    std::size_t incremental_steps{5};
    std::uint64_t order_seed{1};
  } schedule;

  struct Memory {
    std::string policy{"growing"};  // growing | fixed
    std::size_t per_class{20};
    std::size_t budget{0};
    std::string selection{"herding"};  // herding | random
    std::string features{"pre_update"};  // pre_update | post_update
  } memory;

  struct Loss {
    std::string mode{"balanced"};  // standard|balanced|alpha|relaxed|rescaled|meta
    double alpha{1.0};
    double epsilon_value{0.2};
    bool epsilon_is_percent{true};
    double temperature{2.0};
  } loss;

  struct Train {
    int epochs{30};
    int batch_size{32};
    double lr{0.1};
    std::vector<int> lr_milestones{20, 26};
    double lr_decay{0.1};
    double momentum{0.9};
    double weight_decay{2e-4};
    std::vector<std::size_t> hidden{64, 64};
    std::string oversampling{"none"};  // none | memory | class
    int finetune_epochs{0};
    double finetune_lr{0.01};
  } train;

  struct Meta {
    double alpha_lr{0.01};
    int update_period{10};
    double val_fraction{0.1};
    double alpha_min{1e-3};
    double alpha_max{1.0};
  } meta;

  struct Run {
    std::uint64_t seed{1};
    std::string out;
  } run;

  void validate() const;
  nlohmann::json to_json() const;

  bool is_meta() const { return loss.mode == "meta"; }
};

/// Parse the sectioned key/value format. Unknown sections or keys fail
/// loudly with the offending name.
ExperimentConfig parse_config_file(const std::filesystem::path& path);
ExperimentConfig parse_config_text(const std::string& text);

/// Flag-level overrides; unset fields leave the config untouched.
struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> loss_mode;
  std::optional<double> alpha;
  std::optional<std::string> epsilon;  // absolute or "x%" form
  std::optional<std::size_t> memory_per_class;
  std::optional<std::size_t> steps;
};

void apply_overrides(ExperimentConfig& cfg, const ConfigOverrides& overrides);

/// Parse "0.5" or "0.2%" into (value, is_percent).
std::pair<double, bool> parse_epsilon(const std::string& text);

/// Absolute relaxed-mode floor for one step. The percentage form converts
/// against the smallest per-class sample count present in the step data.
double epsilon_for_step(const ExperimentConfig& cfg,
                        const LabeledDataset& step_data);

/// Execute the whole schedule. When out_dir is set, the run record, one
/// confusion CSV pair per step, the memory state, per-step checkpoints
/// and a timing sidecar are written there with deterministic names.
RunRecord run_experiment(const ExperimentConfig& cfg,
                         const std::optional<std::filesystem::path>& out_dir);

struct CompareRow {
  std::uint64_t seed{0};
  double a_accuracy{0.0};
  double b_accuracy{0.0};
  double difference() const { return b_accuracy - a_accuracy; }
};

struct CompareResult {
  std::vector<CompareRow> rows;
  double a_mean{0.0};
  double b_mean{0.0};
  double mean_difference() const { return b_mean - a_mean; }
  nlohmann::json to_json() const;
};

/// Paired-seed comparison. The configs must agree on everything except
/// the loss and bias-mitigation fields; otherwise the differing fields
/// are listed in the error.
CompareResult compare_experiments(const ExperimentConfig& a,
                                  const ExperimentConfig& b,
                                  const std::vector<std::uint64_t>& seeds);

enum class SweepField { alpha, epsilon };

struct SweepRow {
  double value{0.0};
  double final_base_accuracy{0.0};
  double final_overall_accuracy{0.0};
  double average_incremental_accuracy{0.0};
  RunRecord record;
};

struct SweepResult {
  SweepField field{SweepField::alpha};
  std::vector<SweepRow> rows;
  nlohmann::json to_json() const;
};

/// One full run per value at a shared seed. alpha sweeps require the
/// alpha loss mode, epsilon sweeps the relaxed mode.
SweepResult sweep_experiment(const ExperimentConfig& cfg, SweepField field,
                             const std::vector<double>& values);

/// Re-render the per-step confusion CSVs from a stored run record.
void emit_confusion(const std::filesystem::path& record_path,
                    const std::filesystem::path& out_dir);

std::string step_file_name(const std::string& stem, int step,
                           const std::string& ext);

}  // namespace cil
