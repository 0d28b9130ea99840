// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#include "cil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace cil {

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

Fraction top_k_accuracy_counts(const Tensor& logits,
                               std::span<const int> labels, std::size_t k) {
  if (logits.rank() != 2)
    throw ShapeError("top_k expects [batch x classes] logits");
  const std::size_t b = logits.shape()[0], n = logits.shape()[1];
  if (labels.size() != b) throw ShapeError("one label per row required");
  if (k < 1 || k > n)
    throw ArgumentError("k must lie in [1, " + std::to_string(n) + "]");

  Fraction acc{0, static_cast<std::int64_t>(b)};
  for (std::size_t i = 0; i < b; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= n)
      throw ArgumentError("label out of range");
    const double zy = logits[i * n + static_cast<std::size_t>(y)];
    // rank = entries strictly above the label plus equal entries with a
    // smaller index; the label is in the top k iff rank < k.
    std::size_t rank = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double zj = logits[i * n + j];
      if (zj > zy || (zj == zy && j < static_cast<std::size_t>(y))) ++rank;
    }
    if (rank < k) ++acc.correct;
  }
  return acc;
}

double top_k_accuracy(const Tensor& logits, std::span<const int> labels,
                      std::size_t k) {
  return top_k_accuracy_counts(logits, labels, k).ratio();
}

std::vector<std::int64_t> confusion_matrix(std::span<const int> predictions,
                                           std::span<const int> labels,
                                           std::size_t n) {
  if (predictions.size() != labels.size())
    throw ShapeError("predictions and labels differ in length");
  std::vector<std::int64_t> conf(n * n, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = predictions[i];
    if (t < 0 || static_cast<std::size_t>(t) >= n || p < 0 ||
        static_cast<std::size_t>(p) >= n)
      throw ArgumentError("confusion entry out of range");
    conf[static_cast<std::size_t>(t) * n + static_cast<std::size_t>(p)] += 1;
  }
  return conf;
}

double average_incremental_accuracy(std::span<const double> per_step_top1) {
  if (per_step_top1.empty())
    throw ArgumentError("average over an empty accuracy list");
  double acc = 0.0;
  for (double v : per_step_top1) acc += v;
  return acc / static_cast<double>(per_step_top1.size());
}

Fraction group_accuracy_counts(const std::vector<std::int64_t>& confusion,
                               std::size_t n, std::size_t begin,
                               std::size_t end) {
  if (confusion.size() != n * n)
    throw ShapeError("confusion matrix is not n x n");
  if (begin >= end || end > n)
    throw ArgumentError("class group [" + std::to_string(begin) + ", " +
                        std::to_string(end) + ") is empty or out of range");
  Fraction acc;
  for (std::size_t i = begin; i < end; ++i) {
    acc.correct += confusion[i * n + i];
    for (std::size_t j = 0; j < n; ++j) acc.total += confusion[i * n + j];
  }
  return acc;
}

double group_accuracy(const std::vector<std::int64_t>& confusion,
                      std::size_t n, std::size_t begin, std::size_t end) {
  return group_accuracy_counts(confusion, n, begin, end).ratio();
}

void StepReport::check() const {
  if (confusion.size() != num_classes * num_classes)
    throw ShapeError("confusion matrix size mismatch");
  std::int64_t trace = 0, total = 0;
  for (std::size_t i = 0; i < num_classes; ++i) {
    std::int64_t row = 0;
    for (std::size_t j = 0; j < num_classes; ++j)
      row += confusion[i * num_classes + j];
    if (i < per_class.size() && per_class[i].total != row)
      throw ShapeError("confusion row sum disagrees with per-class total");
    trace += confusion[i * num_classes + i];
    total += row;
  }
  if (trace != top1.correct || total != top1.total)
    throw ShapeError("top-1 does not equal trace(confusion)/total");
}

namespace {

nlohmann::json fraction_json(const Fraction& f) {
  return nlohmann::json{{"correct", f.correct}, {"total", f.total}};
}

Fraction fraction_from_json(const nlohmann::json& j) {
  return Fraction{j.at("correct").get<std::int64_t>(),
                  j.at("total").get<std::int64_t>()};
}

}  // namespace

nlohmann::json to_json(const StepReport& r) {
  nlohmann::json conf = nlohmann::json::array();
  for (std::size_t i = 0; i < r.num_classes; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < r.num_classes; ++j)
      row.push_back(r.confusion[i * r.num_classes + j]);
    conf.push_back(std::move(row));
  }
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& f : r.per_class) per_class.push_back(fraction_json(f));
  return nlohmann::json{{"step", r.step},
                        {"num_classes", r.num_classes},
                        {"top1", fraction_json(r.top1)},
                        {"top5", fraction_json(r.top5)},
                        {"per_class", std::move(per_class)},
                        {"confusion", std::move(conf)},
                        {"base_group", fraction_json(r.base_group)},
                        {"newest_group", fraction_json(r.newest_group)},
                        {"alpha_trajectory", r.alpha_trajectory}};
}

StepReport step_report_from_json(const nlohmann::json& j) {
  StepReport r;
  r.step = j.at("step").get<int>();
  r.num_classes = j.at("num_classes").get<std::size_t>();
  r.top1 = fraction_from_json(j.at("top1"));
  r.top5 = fraction_from_json(j.at("top5"));
  for (const auto& f : j.at("per_class")) r.per_class.push_back(fraction_from_json(f));
  r.confusion.reserve(r.num_classes * r.num_classes);
  for (const auto& row : j.at("confusion"))
    for (const auto& v : row) r.confusion.push_back(v.get<std::int64_t>());
  r.base_group = fraction_from_json(j.at("base_group"));
  r.newest_group = fraction_from_json(j.at("newest_group"));
  r.alpha_trajectory = j.at("alpha_trajectory").get<std::vector<double>>();
  return r;
}

nlohmann::json to_json(const RunRecord& record) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : record.steps) steps.push_back(to_json(s));
  return nlohmann::json{
      {"average_incremental_accuracy", record.average_incremental_accuracy},
      {"config", record.config},
      {"steps", std::move(steps)}};
}

RunRecord run_record_from_json(const nlohmann::json& j) {
  RunRecord record;
  record.average_incremental_accuracy =
      j.at("average_incremental_accuracy").get<double>();
  record.config = j.at("config");
  for (const auto& s : j.at("steps"))
    record.steps.push_back(step_report_from_json(s));
  return record;
}

void write_run_record(const RunRecord& record,
                      const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw FormatError("cannot write run record: " + path.string());
  os << to_json(record).dump(2) << '\n';
}

RunRecord read_run_record(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open run record: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("run record " + path.string() + ": " + e.what());
  }
  return run_record_from_json(j);
}

void write_confusion_csv(const std::vector<std::int64_t>& confusion,
                         std::size_t n, const std::filesystem::path& path) {
  if (confusion.size() != n * n)
    throw ShapeError("confusion matrix is not n x n");
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot write confusion csv: " + path.string());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j) os << ',';
      os << confusion[i * n + j];
    }
    os << '\n';
  }
}

void write_confusion_log1p_csv(const std::vector<std::int64_t>& confusion,
                               std::size_t n,
                               const std::filesystem::path& path) {
  if (confusion.size() != n * n)
    throw ShapeError("confusion matrix is not n x n");
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot write confusion csv: " + path.string());
  os.precision(17);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j) os << ',';
      os << std::log1p(static_cast<double>(confusion[i * n + j]));
    }
    os << '\n';
  }
}

std::string format_percent(double percent) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", percent);
  return buf;
}

}  // namespace cil
