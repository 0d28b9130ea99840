// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cil/errors.hpp"
#include "cil/tensor.hpp"

#include <json.hpp>

namespace cil {

/// Accuracy kept as an exact count pair; rendered as a percentage with
/// two decimals where tables are printed.
struct Fraction {
  std::int64_t correct{0};
  std::int64_t total{0};

  double ratio() const {
    return total == 0 ? 0.0
                      : static_cast<double>(correct) / static_cast<double>(total);
  }
  double percent() const { return 100.0 * ratio(); }
};

/// Index of the largest entry; ties go to the smaller index.
std::size_t argmax_row(std::span<const double> row);

/// Fraction of rows whose label ranks among the k largest logits, with
/// ties resolved in favor of smaller class indices.
Fraction top_k_accuracy_counts(const Tensor& logits, std::span<const int> labels,
                               std::size_t k);
double top_k_accuracy(const Tensor& logits, std::span<const int> labels,
                      std::size_t k);

/// n x n row-major counts; entry (i, j) counts true class i predicted j.
std::vector<std::int64_t> confusion_matrix(std::span<const int> predictions,
                                           std::span<const int> labels,
                                           std::size_t n);

/// Arithmetic mean of the per-step accuracies.
double average_incremental_accuracy(std::span<const double> per_step_top1);

/// Correct predictions within [begin, end) divided by that group's samples.
Fraction group_accuracy_counts(const std::vector<std::int64_t>& confusion,
                               std::size_t n, std::size_t begin,
                               std::size_t end);
double group_accuracy(const std::vector<std::int64_t>& confusion,
                      std::size_t n, std::size_t begin, std::size_t end);

/// Metrics of one training step, evaluated on the cumulative test set.
struct StepReport {
  int step{0};
  std::size_t num_classes{0};
  Fraction top1;
  Fraction top5;  // k = min(5, classes)
  std::vector<Fraction> per_class;
  std::vector<std::int64_t> confusion;  // num_classes^2, row-major
  Fraction base_group;
  Fraction newest_group;
  std::vector<double> alpha_trajectory;  // meta mode only
  double wall_seconds{0.0};  // informational; not part of the canonical JSON

  void check() const;
};

/// A full experiment: config echo, one report per step, and the mean of
/// the per-step top-1 percentages.
struct RunRecord {
  nlohmann::json config;
  std::vector<StepReport> steps;
  double average_incremental_accuracy{0.0};
};

/// Canonical JSON form. Volatile fields (wall-clock) are excluded so the
/// serialization of a seeded run is byte-stable.
nlohmann::json to_json(const StepReport& report);
nlohmann::json to_json(const RunRecord& record);
StepReport step_report_from_json(const nlohmann::json& j);
RunRecord run_record_from_json(const nlohmann::json& j);

void write_run_record(const RunRecord& record,
                      const std::filesystem::path& path);
RunRecord read_run_record(const std::filesystem::path& path);

/// Raw counts, one row per line. The log1p variant applies log(1 + x),
/// the transform used when plotting the matrices.
void write_confusion_csv(const std::vector<std::int64_t>& confusion,
                         std::size_t n, const std::filesystem::path& path);
void write_confusion_log1p_csv(const std::vector<std::int64_t>& confusion,
                               std::size_t n,
                               const std::filesystem::path& path);

std::string format_percent(double percent);

}  // namespace cil
