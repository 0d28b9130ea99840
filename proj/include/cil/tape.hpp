// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "cil/dual.hpp"
#include "cil/errors.hpp"
#include "cil/tensor.hpp"

namespace cil {

/// Reverse-mode tape over TensorT<S>. Every differentiable operation is a
/// method that computes its forward value and, when any operand requires
/// gradients, records a backward closure. backward() replays the closures
/// in exact reverse execution order.
///
/// A tape is rebuilt per forward pass and is single-threaded; tensors with
/// completed forward values are immutable and may be read concurrently.
template <typename S>
class TapeT {
 public:
  using Tensor = TensorT<S>;

  // ---- matrix product -----------------------------------------------

  Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
      throw ShapeError("matmul requires rank-2 operands, got " +
                       shape_string(a.shape()) + " and " +
                       shape_string(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
      throw ShapeError("matmul inner dimensions disagree: " +
                       shape_string(a.shape()) + " vs " +
                       shape_string(b.shape()));

    Tensor out = Tensor::zeros({m, n});
    {
      const auto& av = a.values();
      const auto& bv = b.values();
      auto& ov = out.values();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const S aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) ov[i * n + j] += aip * bv[p * n + j];
        }
    }
    if (a.requires_grad() || b.requires_grad()) {
      out.set_requires_grad(true);
      auto as = a.storage(), bs = b.storage(), os = out.storage();
      record(os, [as, bs, os, m, k, n] {
        const auto& og = os->grad;
        if (as->requires_grad) {
          ensure_grad(*as);
          // a.grad += out.grad * b^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              S acc(0);
              for (std::size_t j = 0; j < n; ++j)
                acc += og[i * n + j] * bs->values[p * n + j];
              as->grad[i * k + p] += acc;
            }
        }
        if (bs->requires_grad) {
          ensure_grad(*bs);
          // b.grad += a^T * out.grad
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < n; ++j) {
              S acc(0);
              for (std::size_t i = 0; i < m; ++i)
                acc += as->values[i * k + p] * og[i * n + j];
              bs->grad[p * n + j] += acc;
            }
        }
      });
    }
    return out;
  }

  // ---- elementwise ---------------------------------------------------
  // Binary ops accept equal shapes or a one-element operand, which
  // broadcasts; its gradient is the sum of the elementwise contributions.

  Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, [](S x, S y) { return x + y; },
        [](S /*x*/, S /*y*/, S g) { return g; },
        [](S /*x*/, S /*y*/, S g) { return g; });
  }

  Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, [](S x, S y) { return x - y; },
        [](S, S, S g) { return g; }, [](S, S, S g) { return -g; });
  }

  Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, [](S x, S y) { return x * y; },
        [](S, S y, S g) { return g * y; }, [](S x, S, S g) { return g * x; });
  }

  /// Multiply by a plain constant.
  Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * S(c);
    if (a.requires_grad()) {
      out.set_requires_grad(true);
      auto as = a.storage(), os = out.storage();
      record(os, [as, os, c] {
        ensure_grad(*as);
        for (std::size_t i = 0; i < as->grad.size(); ++i)
          as->grad[i] += os->grad[i] * S(c);
      });
    }
    return out;
  }

  Tensor relu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i)
      out[i] = value_of(a[i]) > 0.0 ? a[i] : S(0);
    if (a.requires_grad()) {
      out.set_requires_grad(true);
      auto as = a.storage(), os = out.storage();
      record(os, [as, os] {
        ensure_grad(*as);
        for (std::size_t i = 0; i < as->grad.size(); ++i)
          if (value_of(as->values[i]) > 0.0) as->grad[i] += os->grad[i];
      });
    }
    return out;
  }

  Tensor exp(const Tensor& a) {
    using std::exp;
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = exp(a[i]);
    if (a.requires_grad()) {
      out.set_requires_grad(true);
      auto as = a.storage(), os = out.storage();
      record(os, [as, os] {
        ensure_grad(*as);
        for (std::size_t i = 0; i < as->grad.size(); ++i)
          as->grad[i] += os->grad[i] * os->values[i];
      });
    }
    return out;
  }

  Tensor log(const Tensor& a) {
    using std::log;
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!(value_of(a[i]) > 0.0))
        throw DomainError("log of non-positive value at index " +
                          std::to_string(i));
      out[i] = log(a[i]);
    }
    if (a.requires_grad()) {
      out.set_requires_grad(true);
      auto as = a.storage(), os = out.storage();
      record(os, [as, os] {
        ensure_grad(*as);
        for (std::size_t i = 0; i < as->grad.size(); ++i)
          as->grad[i] += os->grad[i] / as->values[i];
      });
    }
    return out;
  }

  Tensor negate(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = -a[i];
    if (a.requires_grad()) {
      out.set_requires_grad(true);
      auto as = a.storage(), os = out.storage();
      record(os, [as, os] {
        ensure_grad(*as);
        for (std::size_t i = 0; i < as->grad.size(); ++i)
          as->grad[i] -= os->grad[i];
      });
    }
    return out;
  }

  // ---- reductions ------------------------------------------------------

  Tensor sum(const Tensor& a) {
    S acc(0);
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
    Tensor out = Tensor::from({1}, {acc});
    if (a.requires_grad()) {
      out.set_requires_grad(true);
      auto as = a.storage(), os = out.storage();
      record(os, [as, os] {
        ensure_grad(*as);
        for (std::size_t i = 0; i < as->grad.size(); ++i)
          as->grad[i] += os->grad[0];
      });
    }
    return out;
  }

  Tensor sum(const Tensor& a, int axis) {
    if (a.rank() == 1) {
      if (axis != 0) throw ShapeError("axis out of range for vector");
      return sum(a);
    }
    const auto dims = axis_dims(a, axis);
    const std::size_t m = dims.first, n = dims.second;
    Tensor out = Tensor::zeros({axis == 0 ? n : m});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        out[axis == 0 ? j : i] += a[i * n + j];
    if (a.requires_grad()) {
      out.set_requires_grad(true);
      auto as = a.storage(), os = out.storage();
      record(os, [as, os, m, n, axis] {
        ensure_grad(*as);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            as->grad[i * n + j] += os->grad[axis == 0 ? j : i];
      });
    }
    return out;
  }

  Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.size());
    return scale(sum(a), inv);
  }

  Tensor mean(const Tensor& a, int axis) {
    if (a.rank() == 1) {
      if (axis != 0) throw ShapeError("axis out of range for vector");
      return mean(a);
    }
    const auto dims = axis_dims(a, axis);
    const std::size_t reduced = axis == 0 ? dims.first : dims.second;
    return scale(sum(a, axis), 1.0 / static_cast<double>(reduced));
  }

  Tensor logsumexp(const Tensor& a) {
    using std::exp;
    using std::log;
    std::size_t arg = 0;
    for (std::size_t i = 1; i < a.size(); ++i)
      if (value_of(a[i]) > value_of(a[arg])) arg = i;
    const S shift = a[arg];
    S acc(0);
    for (std::size_t i = 0; i < a.size(); ++i) acc += exp(a[i] - shift);
    Tensor out = Tensor::from({1}, {shift + log(acc)});
    if (a.requires_grad()) {
      out.set_requires_grad(true);
      auto as = a.storage(), os = out.storage();
      record(os, [as, os] {
        using std::exp;
        ensure_grad(*as);
        for (std::size_t i = 0; i < as->grad.size(); ++i)
          as->grad[i] += os->grad[0] * exp(as->values[i] - os->values[0]);
      });
    }
    return out;
  }

  Tensor logsumexp(const Tensor& a, int axis) {
    using std::exp;
    using std::log;
    if (a.rank() == 1) {
      if (axis != 0) throw ShapeError("axis out of range for vector");
      return logsumexp(a);
    }
    const auto dims = axis_dims(a, axis);
    const std::size_t m = dims.first, n = dims.second;
    const std::size_t out_len = axis == 0 ? n : m;
    const std::size_t red_len = axis == 0 ? m : n;
    Tensor out = Tensor::zeros({out_len});
    auto at = [&](std::size_t o, std::size_t r) {
      return axis == 0 ? a[r * n + o] : a[o * n + r];
    };
    for (std::size_t o = 0; o < out_len; ++o) {
      std::size_t arg = 0;
      for (std::size_t r = 1; r < red_len; ++r)
        if (value_of(at(o, r)) > value_of(at(o, arg))) arg = r;
      const S shift = at(o, arg);
      S acc(0);
      for (std::size_t r = 0; r < red_len; ++r) acc += exp(at(o, r) - shift);
      out[o] = shift + log(acc);
    }
    if (a.requires_grad()) {
      out.set_requires_grad(true);
      auto as = a.storage(), os = out.storage();
      record(os, [as, os, m, n, axis] {
        using std::exp;
        ensure_grad(*as);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t o = axis == 0 ? j : i;
            as->grad[i * n + j] +=
                os->grad[o] * exp(as->values[i * n + j] - os->values[o]);
          }
      });
    }
    return out;
  }

  // ---- structural ------------------------------------------------------

  /// Repeat a length-n vector as the rows of an m-by-n matrix.
  Tensor tile_rows(const Tensor& row, std::size_t m) {
    if (row.rank() != 1) throw ShapeError("tile_rows expects a vector");
    if (m == 0) throw ShapeError("tile_rows: row count must be positive");
    const std::size_t n = row.size();
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j];
    if (row.requires_grad()) {
      out.set_requires_grad(true);
      auto rs = row.storage(), os = out.storage();
      record(os, [rs, os, m, n] {
        ensure_grad(*rs);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) rs->grad[j] += os->grad[i * n + j];
      });
    }
    return out;
  }

  /// Repeat a length-m vector as the columns of an m-by-n matrix.
  Tensor tile_cols(const Tensor& col, std::size_t n) {
    if (col.rank() != 1) throw ShapeError("tile_cols expects a vector");
    if (n == 0) throw ShapeError("tile_cols: column count must be positive");
    const std::size_t m = col.size();
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = col[i];
    if (col.requires_grad()) {
      out.set_requires_grad(true);
      auto cs = col.storage(), os = out.storage();
      record(os, [cs, os, m, n] {
        ensure_grad(*cs);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) cs->grad[i] += os->grad[i * n + j];
      });
    }
    return out;
  }

  /// Select a subset of columns, in the given order.
  Tensor gather_cols(const Tensor& a, std::vector<std::size_t> cols) {
    if (a.rank() != 2) throw ShapeError("gather_cols expects a matrix");
    if (cols.empty()) throw ShapeError("gather_cols: empty column list");
    const std::size_t m = a.shape()[0], n = a.shape()[1], k = cols.size();
    for (std::size_t c : cols)
      if (c >= n) throw ShapeError("gather_cols: column index out of range");
    Tensor out = Tensor::zeros({m, k});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) out[i * k + j] = a[i * n + cols[j]];
    if (a.requires_grad()) {
      out.set_requires_grad(true);
      auto as = a.storage(), os = out.storage();
      record(os, [as, os, cols = std::move(cols), m, n, k] {
        ensure_grad(*as);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < k; ++j)
            as->grad[i * n + cols[j]] += os->grad[i * k + j];
      });
    }
    return out;
  }

  /// out[i] = a[i, labels[i]]; the per-row entry pick used by CE losses.
  Tensor take_per_row(const Tensor& a, std::span<const int> labels) {
    if (a.rank() != 2) throw ShapeError("take_per_row expects a matrix");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    if (labels.size() != m)
      throw ShapeError("take_per_row: one label per row required");
    std::vector<int> idx(labels.begin(), labels.end());
    for (int v : idx)
      if (v < 0 || static_cast<std::size_t>(v) >= n)
        throw InvalidLabelError("take_per_row: label out of range");
    Tensor out = Tensor::zeros({m});
    for (std::size_t i = 0; i < m; ++i)
      out[i] = a[i * n + static_cast<std::size_t>(idx[i])];
    if (a.requires_grad()) {
      out.set_requires_grad(true);
      auto as = a.storage(), os = out.storage();
      record(os, [as, os, idx = std::move(idx), m, n] {
        ensure_grad(*as);
        for (std::size_t i = 0; i < m; ++i)
          as->grad[i * n + static_cast<std::size_t>(idx[i])] += os->grad[i];
      });
    }
    return out;
  }

  // ---- differentiation -------------------------------------------------

  /// Populate grad for every participating tensor with d(scalar)/d(tensor).
  /// Leaf gradients accumulate across calls; intermediate gradients are
  /// reset per call so that each replay contributes exactly once.
  void backward(const Tensor& scalar) {
    if (scalar.size() != 1)
      throw ShapeError("backward requires a one-element tensor, got " +
                       shape_string(scalar.shape()));
    if (nodes_.empty()) throw ArgumentError("backward on an empty tape");
    for (auto& os : outputs_) os->grad.assign(os->values.size(), S(0));
    auto ss = scalar.storage();
    if (ss->requires_grad) {
      ensure_grad(*ss);
      ss->grad[0] += S(1);
    }
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      (*it)();
      ++visits_;
    }
  }

  std::size_t num_ops() const { return nodes_.size(); }
  std::size_t backward_visits() const { return visits_; }

  /// Register a custom node. The closure must add the operands' gradient
  /// contributions; `result` is the tensor whose grad seeds it.
  void record(const std::shared_ptr<TensorStorage<S>>& result,
              std::function<void()> fn) {
    outputs_.push_back(result);
    nodes_.push_back(std::move(fn));
  }

  static void ensure_grad(TensorStorage<S>& s) {
    if (s.grad.size() != s.values.size()) s.grad.assign(s.values.size(), S(0));
  }

 private:
  template <typename F, typename Ga, typename Gb>
  Tensor binary(const Tensor& a, const Tensor& b, F fwd, Ga grad_a, Gb grad_b) {
    const bool a_scalar = a.size() == 1 && b.size() != 1;
    const bool b_scalar = b.size() == 1 && a.size() != 1;
    if (!a_scalar && !b_scalar && a.shape() != b.shape())
      throw ShapeError("elementwise operands disagree: " +
                       shape_string(a.shape()) + " vs " +
                       shape_string(b.shape()));
    const Tensor& big = a_scalar ? b : a;
    Tensor out = Tensor::zeros(big.shape());
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i)
      out[i] = fwd(a[a_scalar ? 0 : i], b[b_scalar ? 0 : i]);
    if (a.requires_grad() || b.requires_grad()) {
      out.set_requires_grad(true);
      auto as = a.storage(), bs = b.storage(), os = out.storage();
      record(os, [as, bs, os, n, a_scalar, b_scalar, grad_a, grad_b] {
        if (as->requires_grad) {
          ensure_grad(*as);
          for (std::size_t i = 0; i < n; ++i)
            as->grad[a_scalar ? 0 : i] +=
                grad_a(as->values[a_scalar ? 0 : i],
                       bs->values[b_scalar ? 0 : i], os->grad[i]);
        }
        if (bs->requires_grad) {
          ensure_grad(*bs);
          for (std::size_t i = 0; i < n; ++i)
            bs->grad[b_scalar ? 0 : i] +=
                grad_b(as->values[a_scalar ? 0 : i],
                       bs->values[b_scalar ? 0 : i], os->grad[i]);
        }
      });
    }
    return out;
  }

  static std::pair<std::size_t, std::size_t> axis_dims(const Tensor& a,
                                                       int axis) {
    if (a.rank() != 2 || (axis != 0 && axis != 1))
      throw ShapeError("axis reductions support rank-2 tensors, axis 0 or 1");
    return {a.shape()[0], a.shape()[1]};
  }

  std::vector<std::function<void()>> nodes_;
  std::vector<std::shared_ptr<TensorStorage<S>>> outputs_;
  std::size_t visits_{0};
};

using Tape = TapeT<double>;

/// Max relative disagreement between the tape gradient of f at x and a
/// central finite difference with step h. The denominator is clamped at 1
/// so near-zero derivatives do not inflate the ratio.
inline double grad_check(
    const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x,
    double h) {
  if (!(h > 0.0)) throw ArgumentError("grad_check: h must be positive");

  Tape tape;
  Tensor xp = Tensor::param(x.shape(), x.values());
  Tensor y = f(tape, xp);
  if (y.size() != 1) throw ShapeError("grad_check: f must return a scalar");
  tape.backward(y);
  const std::vector<double> analytic = xp.grad();

  auto eval = [&](const std::vector<double>& vals) {
    Tape t;
    Tensor xi = Tensor::from(x.shape(), vals);
    Tensor yi = f(t, xi);
    if (yi.size() != 1) throw ShapeError("grad_check: f must return a scalar");
    const double v = yi[0];
    if (!std::isfinite(v))
      throw NumericError("grad_check: non-finite function value");
    return v;
  };

  double worst = 0.0;
  std::vector<double> vals = x.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double orig = vals[i];
    vals[i] = orig + h;
    const double up = eval(vals);
    vals[i] = orig - h;
    const double down = eval(vals);
    vals[i] = orig;
    const double fd = (up - down) / (2.0 * h);
    if (!std::isfinite(fd) || !std::isfinite(analytic[i]))
      throw NumericError("grad_check: non-finite derivative");
    const double err =
        std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace cil
