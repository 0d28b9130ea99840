// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#include "cil/schedule.hpp"

#include <string>

#include "cil/rng.hpp"

namespace cil {

std::size_t IncrementalSchedule::classes_after(std::size_t t) const {
  if (t >= group_sizes.size())
    throw ArgumentError("step index out of range");
  std::size_t n = 0;
  for (std::size_t i = 0; i <= t; ++i) n += group_sizes[i];
  return n;
}

std::size_t IncrementalSchedule::group_begin(std::size_t t) const {
  if (t >= group_sizes.size())
    throw ArgumentError("step index out of range");
  std::size_t n = 0;
  for (std::size_t i = 0; i < t; ++i) n += group_sizes[i];
  return n;
}

std::size_t IncrementalSchedule::remap(std::size_t original) const {
  if (original >= remap_.size())
    throw ArgumentError("class id out of range");
  return remap_[original];
}

IncrementalSchedule build_schedule(std::size_t num_classes,
                                   std::size_t base_count,
                                   std::size_t num_inc_steps,
                                   std::uint64_t seed) {
  if (num_classes == 0) throw ArgumentError("schedule needs classes");
  if (base_count == 0 || base_count > num_classes)
    throw ArgumentError("base step must contain between 1 and " +
                        std::to_string(num_classes) + " classes");
  const std::size_t remaining = num_classes - base_count;
  if (num_inc_steps == 0) {
    if (remaining != 0)
      throw ArgumentError("no incremental steps but " +
                          std::to_string(remaining) + " classes remain");
  } else if (remaining == 0) {
    throw ArgumentError("no classes remain for the incremental steps");
  } else if (remaining % num_inc_steps != 0) {
    std::string valid;
    for (std::size_t s = 1; s <= remaining; ++s)
      if (remaining % s == 0) valid += (valid.empty() ? "" : ", ") +
                                       std::to_string(s);
    throw ArgumentError(
        std::to_string(remaining) + " remaining classes are not divisible "
        "by " + std::to_string(num_inc_steps) + " steps; valid step counts: " +
        valid);
  }

  IncrementalSchedule sched;
  sched.class_order.resize(num_classes);
  for (std::size_t i = 0; i < num_classes; ++i) sched.class_order[i] = i;
  Rng rng(seed);
  rng.shuffle(sched.class_order);

  sched.base_count = base_count;
  sched.group_sizes.push_back(base_count);
  for (std::size_t t = 0; t < num_inc_steps; ++t)
    sched.group_sizes.push_back(remaining / num_inc_steps);

  sched.remap_.assign(num_classes, 0);
  for (std::size_t pos = 0; pos < num_classes; ++pos)
    sched.remap_[sched.class_order[pos]] = pos;
  return sched;
}

LabeledDataset remap_dataset(const LabeledDataset& data,
                             const IncrementalSchedule& schedule) {
  if (data.num_classes != schedule.num_classes())
    throw ArgumentError("dataset and schedule class counts disagree");
  LabeledDataset out;
  out.dim = data.dim;
  out.num_classes = data.num_classes;
  out.samples = data.samples;
  out.labels.resize(data.labels.size());
  for (std::size_t i = 0; i < data.labels.size(); ++i)
    out.labels[i] = static_cast<int>(
        schedule.remap(static_cast<std::size_t>(data.labels[i])));
  out.rebuild_index();
  return out;
}

namespace {

LabeledDataset select_rows(const LabeledDataset& data,
                           const std::vector<std::size_t>& rows) {
  LabeledDataset out;
  out.dim = data.dim;
  out.num_classes = data.num_classes;
  out.labels.reserve(rows.size());
  out.samples.reserve(rows.size() * data.dim);
  for (std::size_t i : rows) {
    out.labels.push_back(data.labels[i]);
    out.samples.insert(out.samples.end(), data.samples.begin() + i * data.dim,
                       data.samples.begin() + (i + 1) * data.dim);
  }
  out.rebuild_index();
  return out;
}

}  // namespace

LabeledDataset step_view(const LabeledDataset& remapped,
                         const IncrementalSchedule& schedule, std::size_t t) {
  if (t >= schedule.group_sizes.size())
    throw ArgumentError("step index " + std::to_string(t) + " out of range");
  const std::size_t lo = schedule.group_begin(t);
  const std::size_t hi = schedule.classes_after(t);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < remapped.labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(remapped.labels[i]);
    if (y >= lo && y < hi) rows.push_back(i);
  }
  return select_rows(remapped, rows);
}

LabeledDataset restrict_to_first_classes(const LabeledDataset& remapped,
                                         std::size_t n_classes) {
  if (n_classes == 0 || n_classes > remapped.num_classes)
    throw ArgumentError("class range out of bounds");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < remapped.labels.size(); ++i)
    if (static_cast<std::size_t>(remapped.labels[i]) < n_classes)
      rows.push_back(i);
  LabeledDataset out = select_rows(remapped, rows);
  out.num_classes = n_classes;
  out.per_class.resize(n_classes);
  return out;
}

}  // namespace cil
