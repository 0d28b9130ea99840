// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#include "cil/replay_memory.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cil/rng.hpp"

namespace cil {

std::vector<std::size_t> herding_select(const Tensor& features,
                                        std::size_t m) {
  if (features.rank() != 2)
    throw ShapeError("herding_select expects [n x d] features");
  const std::size_t n = features.shape()[0], d = features.shape()[1];
  if (m == 0 || m > n)
    throw ArgumentError("herding_select: need 1 <= m <= " + std::to_string(n));
  for (double v : features.values())
    if (!std::isfinite(v)) throw NumericError("herding over non-finite features");

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += features[i * d + j];
  for (double& v : mean) v /= static_cast<double>(n);

  std::vector<std::size_t> picked;
  std::vector<char> used(n, 0);
  std::vector<double> running(d, 0.0);  // sum of selected feature rows
  for (std::size_t s = 1; s <= m; ++s) {
    std::size_t best = n;
    double best_dist = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff =
            mean[j] - (running[j] + features[i * d + j]) / static_cast<double>(s);
        dist += diff * diff;
      }
      if (best == n || dist < best_dist) {
        best = i;
        best_dist = dist;
      }
    }
    used[best] = 1;
    picked.push_back(best);
    for (std::size_t j = 0; j < d; ++j) running[j] += features[best * d + j];
  }
  return picked;
}

std::vector<std::size_t> random_select(std::size_t n, std::size_t m,
                                       std::uint64_t seed) {
  if (m == 0 || m > n)
    throw ArgumentError("random_select: need 1 <= m <= " + std::to_string(n));
  Rng rng(seed);
  return rng.sample_without_replacement(n, m);
}

ReplayMemory ReplayMemory::growing(std::size_t per_class,
                                   SelectionMethod method,
                                   std::uint64_t seed) {
  ReplayMemory mem;
  mem.policy_ = MemoryPolicy::growing;
  mem.method_ = method;
  mem.capacity_ = per_class;
  mem.seed_ = seed;
  return mem;
}

ReplayMemory ReplayMemory::fixed(std::size_t budget, SelectionMethod method,
                                 std::uint64_t seed) {
  ReplayMemory mem;
  mem.policy_ = MemoryPolicy::fixed;
  mem.method_ = method;
  mem.capacity_ = budget;
  mem.seed_ = seed;
  return mem;
}

std::size_t ReplayMemory::quota(std::size_t extra_classes) const {
  if (policy_ == MemoryPolicy::growing) return capacity_;
  const std::size_t classes = store_.size() + extra_classes;
  return classes == 0 ? capacity_ : capacity_ / classes;
}

void ReplayMemory::update(
    const LabeledDataset& source, const std::vector<int>& new_classes,
    const std::function<Tensor(const Tensor&)>& features_of) {
  for (int c : new_classes) {
    if (contains(c))
      throw ArgumentError("class " + std::to_string(c) +
                          " is already stored in memory");
    if (c < 0 || static_cast<std::size_t>(c) >= source.num_classes)
      throw ArgumentError("class " + std::to_string(c) + " not in dataset");
  }

  const std::size_t q = quota(new_classes.size());

  if (policy_ == MemoryPolicy::fixed) {
    // Quota shrinks as classes arrive; keep each list's best prefix.
    for (auto& [cls, rows] : store_)
      if (rows.size() > q) rows.resize(q);
  }

  for (int c : new_classes) {
    const auto& rows = source.per_class[static_cast<std::size_t>(c)];
    if (rows.empty())
      throw ArgumentError("class " + std::to_string(c) + " has no samples");
    const std::size_t take = std::min(q, rows.size());
    if (take == 0) {
      store_[c] = {};
      continue;
    }
    std::vector<std::size_t> order;
    if (method_ == SelectionMethod::herding) {
      auto batch = source.batch(rows);
      Tensor feats = features_of(batch.first);
      order = herding_select(feats, take);
    } else {
      order = random_select(rows.size(), take,
                            mix_seed(seed_, static_cast<std::uint64_t>(c)));
    }
    std::vector<std::size_t> chosen;
    chosen.reserve(order.size());
    for (std::size_t k : order) chosen.push_back(rows[k]);
    store_[c] = std::move(chosen);
  }
}

std::size_t ReplayMemory::total_stored() const {
  std::size_t n = 0;
  for (const auto& [cls, rows] : store_) n += rows.size();
  return n;
}

const std::vector<std::size_t>& ReplayMemory::exemplars(int class_id) const {
  auto it = store_.find(class_id);
  if (it == store_.end())
    throw ArgumentError("class " + std::to_string(class_id) +
                        " is not stored in memory");
  return it->second;
}

std::vector<std::size_t> ReplayMemory::all_rows() const {
  std::vector<std::size_t> rows;
  for (const auto& [cls, lst] : store_)
    rows.insert(rows.end(), lst.begin(), lst.end());
  return rows;
}

void ReplayMemory::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot write memory state: " + path.string());
  for (const auto& [cls, rows] : store_) {
    os << cls << ':';
    for (std::size_t r : rows) os << ' ' << r;
    os << '\n';
  }
}

ReplayMemory ReplayMemory::load(const std::filesystem::path& path,
                                MemoryPolicy policy, std::size_t capacity,
                                SelectionMethod method, std::uint64_t seed) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open memory state: " + path.string());
  ReplayMemory mem;
  mem.policy_ = policy;
  mem.capacity_ = capacity;
  mem.method_ = method;
  mem.seed_ = seed;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t colon = line.find(':');
    if (colon == std::string::npos)
      throw ParseError("memory state line " + std::to_string(line_no) +
                       ": missing ':'");
    int cls = 0;
    try {
      cls = std::stoi(line.substr(0, colon));
    } catch (const std::exception&) {
      throw ParseError("memory state line " + std::to_string(line_no) +
                       ": bad class id");
    }
    std::vector<std::size_t> rows;
    std::istringstream rest(line.substr(colon + 1));
    std::size_t v = 0;
    while (rest >> v) rows.push_back(v);
    mem.store_[cls] = std::move(rows);
  }
  return mem;
}

MergedTrainingSet training_set(const LabeledDataset& step_data,
                               const ReplayMemory& memory,
                               const LabeledDataset& source,
                               std::size_t n_total_classes) {
  for (std::size_t c = 0; c < step_data.per_class.size(); ++c)
    if (!step_data.per_class[c].empty() && memory.contains(static_cast<int>(c)))
      throw ArgumentError("class " + std::to_string(c) +
                          " appears both in the step data and in memory");

  MergedTrainingSet merged;
  merged.data.dim = step_data.dim;
  merged.data.num_classes = n_total_classes;
  merged.counts.assign(n_total_classes, 0);
  merged.old_set.assign(n_total_classes, 0);

  auto push_row = [&](const LabeledDataset& src, std::size_t row) {
    merged.data.labels.push_back(src.labels[row]);
    merged.data.samples.insert(merged.data.samples.end(),
                               src.samples.begin() + row * src.dim,
                               src.samples.begin() + (row + 1) * src.dim);
  };

  for (std::size_t i = 0; i < step_data.size(); ++i) {
    const auto y = static_cast<std::size_t>(step_data.labels[i]);
    if (y >= n_total_classes)
      throw ArgumentError("step label outside the classes seen so far");
    merged.new_rows.push_back(merged.data.labels.size());
    push_row(step_data, i);
    merged.counts[y] += 1;
  }
  for (const auto& [cls, rows] : memory.store()) {
    const auto y = static_cast<std::size_t>(cls);
    if (y >= n_total_classes)
      throw ArgumentError("memory label outside the classes seen so far");
    merged.old_set[y] = 1;
    for (std::size_t r : rows) {
      merged.old_rows.push_back(merged.data.labels.size());
      push_row(source, r);
      merged.counts[y] += 1;
    }
  }
  // Classes already encountered but with no replayed samples keep count 0
  // and still belong to the old set.
  for (std::size_t c = 0; c < n_total_classes; ++c)
    if (merged.counts[c] == 0 && !memory.contains(static_cast<int>(c)) &&
        (c >= step_data.per_class.size() || step_data.per_class[c].empty()))
      merged.old_set[c] = 1;

  merged.data.rebuild_index();
  return merged;
}

}  // namespace cil
