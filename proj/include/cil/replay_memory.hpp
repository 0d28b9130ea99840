// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <vector>

#include "cil/dataset.hpp"
#include "cil/tensor.hpp"

namespace cil {

/// Greedy mean-matching selection: step s picks the unselected row whose
/// inclusion brings the running mean closest (L2) to the full feature
/// mean; ties go to the smallest index. The returned order is the
/// priority order, so prefix truncation keeps the best exemplars.
std::vector<std::size_t> herding_select(const Tensor& features, std::size_t m);

/// Seeded uniform sample of m distinct indices from [0, n).
std::vector<std::size_t> random_select(std::size_t n, std::size_t m,
                                       std::uint64_t seed);

enum class MemoryPolicy { growing, fixed };
enum class SelectionMethod { herding, random };

/// Exemplar store for old classes. Growing policy keeps m exemplars per
/// class; fixed policy divides a total budget evenly and prefix-truncates
/// every class list whenever the quota shrinks. Exemplars are row indices
/// into the run's canonical (remapped) training dataset.
class ReplayMemory {
 public:
  static ReplayMemory growing(std::size_t per_class,
                              SelectionMethod method = SelectionMethod::herding,
                              std::uint64_t seed = 0);
  static ReplayMemory fixed(std::size_t budget,
                            SelectionMethod method = SelectionMethod::herding,
                            std::uint64_t seed = 0);

  MemoryPolicy policy() const { return policy_; }
  SelectionMethod selection() const { return method_; }

  /// Exemplar quota per class under the current number of stored classes
  /// plus `extra_classes` new ones.
  std::size_t quota(std::size_t extra_classes = 0) const;

  /// Select exemplars for each new class. `features_of` maps a batch of
  /// sample rows to embedding rows; it is only consulted for herding.
  /// New classes must not already be stored.
  void update(const LabeledDataset& source, const std::vector<int>& new_classes,
              const std::function<Tensor(const Tensor&)>& features_of);

  bool contains(int class_id) const { return store_.count(class_id) > 0; }
  std::size_t num_stored_classes() const { return store_.size(); }
  std::size_t total_stored() const;

  /// Exemplar rows for one class, in priority order.
  const std::vector<std::size_t>& exemplars(int class_id) const;

  /// All stored rows, classes in ascending id order.
  std::vector<std::size_t> all_rows() const;

  const std::map<int, std::vector<std::size_t>>& store() const {
    return store_;
  }

  /// Text format: one line per class, "class_id: id id id ..." with ids in
  /// priority order, classes ascending.
  void save(const std::filesystem::path& path) const;
  static ReplayMemory load(const std::filesystem::path& path,
                           MemoryPolicy policy, std::size_t capacity,
                           SelectionMethod method, std::uint64_t seed);

 private:
  ReplayMemory() = default;
  MemoryPolicy policy_{MemoryPolicy::growing};
  SelectionMethod method_{SelectionMethod::herding};
  std::size_t capacity_{0};  // per-class m (growing) or total budget (fixed)
  std::uint64_t seed_{0};
  std::map<int, std::vector<std::size_t>> store_;
};

/// A step's training material: the new-class rows merged with the stored
/// exemplars, per-class counts over the merged set, and the row index
/// split the oversampling modes need.
struct MergedTrainingSet {
  LabeledDataset data;
  std::vector<std::int64_t> counts;       // length: classes seen so far
  std::vector<std::uint8_t> old_set;      // 1 for replayed classes
  std::vector<std::size_t> old_rows;      // rows of `data` from memory
  std::vector<std::size_t> new_rows;      // rows of `data` from the step
};

/// Merge a step's data with the replay memory. Class sets must be
/// disjoint: a class is either new this step or replayed from memory.
/// `n_total_classes` sizes the count vector (classes seen through this
/// step).
MergedTrainingSet training_set(const LabeledDataset& step_data,
                               const ReplayMemory& memory,
                               const LabeledDataset& source,
                               std::size_t n_total_classes);

}  // namespace cil
