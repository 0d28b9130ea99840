// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "cil/rng.hpp"
#include "cil/tensor.hpp"

namespace cil::testutil {

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng,
                            double lo = -1.0, double hi = 1.0) {
  const std::size_t n = Tensor::checked_size(shape);
  std::vector<double> vals(n);
  for (double& v : vals) v = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(vals));
}

inline std::vector<int> random_labels(std::size_t count, std::size_t classes,
                                      Rng& rng) {
  std::vector<int> labels(count);
  for (int& y : labels) y = static_cast<int>(rng.below(classes));
  return labels;
}

inline bool bit_equal(const std::vector<double>& a,
                      const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace cil::testutil
