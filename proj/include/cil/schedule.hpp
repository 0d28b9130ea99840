// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "cil/dataset.hpp"

namespace cil {

/// Class-incremental curriculum: a seeded permutation of the original
/// class ids split into a base group followed by equal-sized incremental
/// groups. Remapped ids are contiguous; step t introduces
/// [N_{t-1}, N_t) in remapped space.
struct IncrementalSchedule {
  std::vector<std::size_t> class_order;  // original ids, permutation
  std::size_t base_count{0};
  std::vector<std::size_t> group_sizes;  // |C_0| .. |C_T|

  std::size_t num_steps() const { return group_sizes.size() - 1; }
  std::size_t num_classes() const { return class_order.size(); }

  /// Cumulative class count after step t.
  std::size_t classes_after(std::size_t t) const;

  /// First remapped id introduced at step t.
  std::size_t group_begin(std::size_t t) const;

  /// remapped id for an original class id.
  std::size_t remap(std::size_t original) const;

 private:
  friend IncrementalSchedule build_schedule(std::size_t, std::size_t,
                                            std::size_t, std::uint64_t);
  std::vector<std::size_t> remap_;  // original -> remapped
};

/// Seeded schedule with `base_count` classes at step 0 and the remainder
/// split evenly across `num_inc_steps` incremental steps. The remainder
/// must divide evenly; the error message lists the valid step counts.
IncrementalSchedule build_schedule(std::size_t num_classes,
                                   std::size_t base_count,
                                   std::size_t num_inc_steps,
                                   std::uint64_t seed);

/// Dataset with labels rewritten to the schedule's remapped ids.
LabeledDataset remap_dataset(const LabeledDataset& data,
                             const IncrementalSchedule& schedule);

/// Rows of the remapped dataset whose classes are introduced at step t;
/// labels already carry the contiguous remapped ids.
LabeledDataset step_view(const LabeledDataset& remapped,
                         const IncrementalSchedule& schedule, std::size_t t);

/// Rows of the remapped dataset with label < n_classes; the cumulative
/// evaluation set after a step.
LabeledDataset restrict_to_first_classes(const LabeledDataset& remapped,
                                         std::size_t n_classes);

}  // namespace cil
