// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cil/errors.hpp"
#include "cil/tensor.hpp"

namespace cil {

/// Feature vectors with integer class labels. Samples are row-major,
/// labels index [0, num_classes), and per_class lists partition row ids.
struct LabeledDataset {
  std::size_t dim{0};
  std::size_t num_classes{0};
  std::vector<double> samples;  // n x dim
  std::vector<int> labels;      // n

  std::vector<std::vector<std::size_t>> per_class;

  std::size_t size() const { return labels.size(); }
  void rebuild_index();
  void validate() const;

  /// Rows `indices` as a [k x dim] tensor plus their labels.
  std::pair<Tensor, std::vector<int>> batch(
      const std::vector<std::size_t>& indices) const;
};

enum class DatasetFormat { csv, binary };

/// CSV rows are "label,f1,...,fd". The binary layout is: magic
/// "CILDST01", u32 version, u64 n, u64 d, u32 num_classes, n i32 labels,
/// n*d f64 features row-major, native byte order.
LabeledDataset load_dataset(const std::filesystem::path& path,
                            DatasetFormat format);
void save_dataset(const LabeledDataset& data,
                  const std::filesystem::path& path, DatasetFormat format);

/// Gaussian blob classification task. Class means sit on the unit sphere
/// scaled by a fixed separation radius; samples are N(mean, spread^2 I).
/// Train and test draws are independent and the test set is class
/// balanced. Everything is a deterministic function of the seed.
struct SyntheticTask {
  LabeledDataset train;
  LabeledDataset test;
};

SyntheticTask synthesize_gaussian_task(std::size_t num_classes,
                                       std::size_t dim,
                                       std::size_t n_train_per_class,
                                       std::size_t n_test_per_class,
                                       double spread, std::uint64_t seed);

}  // namespace cil
