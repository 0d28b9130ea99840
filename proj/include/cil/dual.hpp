// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

namespace cil {

/// First-order dual number. `dot` carries the derivative with respect to
/// one designated scalar through arbitrary computation, including replay
/// of a reverse-mode tape, which is how the trainer differentiates a
/// validation loss through a virtual optimizer step.
struct Dual {
  double val{0.0};
  double dot{0.0};

  constexpr Dual() = default;
  constexpr Dual(double v) : val(v) {}  // constants lift with zero tangent
  constexpr Dual(double v, double d) : val(v), dot(d) {}

  Dual& operator+=(const Dual& o) {
    val += o.val;
    dot += o.dot;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    val -= o.val;
    dot -= o.dot;
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    dot = dot * o.val + val * o.dot;
    val *= o.val;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    dot = (dot * o.val - val * o.dot) / (o.val * o.val);
    val /= o.val;
    return *this;
  }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator*(Dual a, const Dual& b) { return a *= b; }
inline Dual operator/(Dual a, const Dual& b) { return a /= b; }
inline Dual operator-(const Dual& a) { return {-a.val, -a.dot}; }

inline Dual exp(const Dual& x) {
  const double e = std::exp(x.val);
  return {e, e * x.dot};
}

inline Dual log(const Dual& x) { return {std::log(x.val), x.dot / x.val}; }

/// Primal value of a scalar; comparisons in generic code go through this.
inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.val; }

inline bool is_finite(double x) { return std::isfinite(x); }
inline bool is_finite(const Dual& x) {
  return std::isfinite(x.val) && std::isfinite(x.dot);
}

}  // namespace cil
