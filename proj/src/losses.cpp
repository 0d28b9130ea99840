// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#include "cil/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cil {

LossMode loss_mode_from_string(const std::string& name) {
  if (name == "standard") return LossMode::standard;
  if (name == "balanced") return LossMode::balanced;
  if (name == "alpha") return LossMode::alpha;
  if (name == "relaxed") return LossMode::relaxed;
  if (name == "rescaled") return LossMode::rescaled;
  throw ArgumentError("unknown loss mode: " + name);
}

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::standard: return "standard";
    case LossMode::balanced: return "balanced";
    case LossMode::alpha: return "alpha";
    case LossMode::relaxed: return "relaxed";
    case LossMode::rescaled: return "rescaled";
  }
  return "?";
}

void ClassPrior::validate() const {
  if (old_set.size() != counts.size())
    throw ArgumentError("ClassPrior: counts/old_set size mismatch");
  for (std::int64_t c : counts)
    if (c < 0) throw ArgumentError("ClassPrior: counts must be non-negative");
}

std::vector<double> build_lambda(const ClassPrior& prior, LossMode mode) {
  prior.validate();
  std::vector<double> lam(prior.counts.size());
  switch (mode) {
    case LossMode::balanced:
      for (std::size_t i = 0; i < lam.size(); ++i)
        lam[i] = static_cast<double>(prior.counts[i]);
      break;
    case LossMode::alpha:
      if (prior.alpha < 0.0 || prior.alpha > 1.0)
        throw ArgumentError("alpha must lie in [0, 1]");
      for (std::size_t i = 0; i < lam.size(); ++i) {
        lam[i] = static_cast<double>(prior.counts[i]);
        if (prior.old_set[i]) lam[i] *= prior.alpha;
      }
      break;
    case LossMode::relaxed:
      if (prior.epsilon < 0.0) throw ArgumentError("epsilon must be >= 0");
      for (std::size_t i = 0; i < lam.size(); ++i)
        lam[i] = prior.old_set[i] ? prior.epsilon
                                  : static_cast<double>(prior.counts[i]);
      break;
    default:
      throw ArgumentError("build_lambda applies to balanced, alpha or "
                          "relaxed modes only");
  }
  return lam;
}

std::vector<double> balanced_softmax_probs(std::span<const double> logits,
                                           std::span<const double> lambda) {
  if (logits.size() != lambda.size())
    throw ShapeError("balanced_softmax_probs: size mismatch");
  const std::size_t n = logits.size();
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j)
    if (lambda[j] > 0.0) mx = std::max(mx, logits[j] + std::log(lambda[j]));
  if (!std::isfinite(mx))
    throw ArgumentError("all classes are masked; probabilities undefined");
  double denom = 0.0;
  std::vector<double> q(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    if (lambda[j] <= 0.0) continue;
    q[j] = std::exp(logits[j] + std::log(lambda[j]) - mx);
    denom += q[j];
  }
  for (double& v : q) v /= denom;
  return q;
}

}  // namespace cil
