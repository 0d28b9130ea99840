// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cil/errors.hpp"

namespace cil {

template <typename S>
struct TensorStorage {
  std::vector<std::size_t> shape;
  std::vector<S> values;
  std::vector<S> grad;  // allocated on first accumulation
  bool requires_grad{false};
};

/// Dense row-major tensor of scalars S. A TensorT is a cheap handle:
/// copies alias the same buffer, deep copies are explicit via clone().
/// Gradients live next to the values and are written by tape replay.
template <typename S>
class TensorT {
 public:
  TensorT() : s_(std::make_shared<TensorStorage<S>>()) {}

  static std::size_t checked_size(const std::vector<std::size_t>& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must be non-empty");
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive");
      n *= d;
    }
    return n;
  }

  static TensorT zeros(std::vector<std::size_t> shape) {
    return full(std::move(shape), S(0));
  }

  static TensorT full(std::vector<std::size_t> shape, S fill) {
    const std::size_t n = checked_size(shape);
    TensorT t;
    t.s_->shape = std::move(shape);
    t.s_->values.assign(n, fill);
    return t;
  }

  static TensorT from(std::vector<std::size_t> shape, std::vector<S> values) {
    const std::size_t n = checked_size(shape);
    if (values.size() != n)
      throw ShapeError("tensor value count does not match shape");
    TensorT t;
    t.s_->shape = std::move(shape);
    t.s_->values = std::move(values);
    return t;
  }

  /// Leaf that participates in differentiation.
  static TensorT param(std::vector<std::size_t> shape, std::vector<S> values) {
    TensorT t = from(std::move(shape), std::move(values));
    t.s_->requires_grad = true;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return s_->shape; }
  std::size_t size() const { return s_->values.size(); }
  std::size_t rank() const { return s_->shape.size(); }

  std::size_t rows() const { return s_->shape.at(0); }
  std::size_t cols() const {
    if (rank() != 2) throw ShapeError("cols() requires a rank-2 tensor");
    return s_->shape[1];
  }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool on) { s_->requires_grad = on; }

  std::vector<S>& values() { return s_->values; }
  const std::vector<S>& values() const { return s_->values; }

  S& operator[](std::size_t i) { return s_->values[i]; }
  const S& operator[](std::size_t i) const { return s_->values[i]; }

  S at(std::size_t r, std::size_t c) const {
    return s_->values[r * cols() + c];
  }

  bool has_grad() const { return s_->grad.size() == s_->values.size(); }

  /// Gradient buffer, allocated to zeros on first use.
  std::vector<S>& grad() {
    if (!has_grad()) s_->grad.assign(s_->values.size(), S(0));
    return s_->grad;
  }
  const std::vector<S>& grad() const {
    const_cast<TensorT*>(this)->grad();
    return s_->grad;
  }

  void zero_grad() { s_->grad.assign(s_->values.size(), S(0)); }

  /// Deep copy of shape and values; gradient state is not carried over.
  TensorT clone() const {
    TensorT t;
    t.s_->shape = s_->shape;
    t.s_->values = s_->values;
    t.s_->requires_grad = s_->requires_grad;
    return t;
  }

  std::shared_ptr<TensorStorage<S>> storage() const { return s_; }

  bool same_storage(const TensorT& o) const { return s_ == o.s_; }

 private:
  std::shared_ptr<TensorStorage<S>> s_;
};

using Tensor = TensorT<double>;

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

}  // namespace cil
