// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cil/tape.hpp"

namespace cil {

/// How the per-class weights of the classification loss are formed.
///   standard  - plain softmax cross-entropy
///   balanced  - weights are the per-class sample counts
///   alpha     - balanced, with old-class counts scaled by a global alpha
///   relaxed   - old-class weights replaced by a small floor epsilon
///   rescaled  - standard CE with per-sample inverse-frequency weights
enum class LossMode { standard, balanced, alpha, relaxed, rescaled };

LossMode loss_mode_from_string(const std::string& name);
std::string to_string(LossMode mode);

/// Per-class sample statistics for the current training set, plus the
/// knobs that turn them into softmax weights.
struct ClassPrior {
  std::vector<std::int64_t> counts;   // n_i over the merged training set
  std::vector<std::uint8_t> old_set;  // 1 for previously encountered classes
  double alpha{1.0};                  // old-class multiplier, alpha mode
  double epsilon{0.0};                // old-class floor, relaxed mode (absolute)

  std::size_t num_classes() const { return counts.size(); }
  void validate() const;
};

/// Per-class weight vector for the requested mode. Classes whose weight is
/// zero are masked: they drop out of the softmax denominator entirely.
std::vector<double> build_lambda(const ClassPrior& prior, LossMode mode);

/// Weight vector with the old-class multiplier applied in scalar type S,
/// so a tangent carried by `alpha` flows into the weights.
template <typename S>
std::vector<S> lambda_with_alpha(const std::vector<std::int64_t>& counts,
                                 const std::vector<std::uint8_t>& old_set,
                                 S alpha) {
  if (old_set.size() != counts.size())
    throw ArgumentError("lambda_with_alpha: counts/old_set size mismatch");
  std::vector<S> lam(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const S n(static_cast<double>(counts[i]));
    lam[i] = old_set[i] ? alpha * n : n;
  }
  return lam;
}

/// Softmax probabilities reweighted by lambda, computed in log space.
/// Masked classes (lambda == 0) get probability exactly 0. This is the
/// direct evaluation route used to cross-check tape gradients.
std::vector<double> balanced_softmax_probs(std::span<const double> logits,
                                           std::span<const double> lambda);

struct DistillConfig {
  double temperature{2.0};
  std::size_t n_old{0};  // classes the previous model knew about

  void validate() const {
    if (!(temperature > 0.0))
      throw ArgumentError("distillation temperature must be positive");
  }
};

namespace detail {

template <typename S>
void check_logits_labels(const TensorT<S>& logits, std::span<const int> labels) {
  if (logits.rank() != 2)
    throw ShapeError("classification loss expects [batch x classes] logits");
  if (labels.size() != logits.shape()[0])
    throw ShapeError("one label per logits row required");
}

}  // namespace detail

/// Cross-entropy under the lambda-weighted softmax
///   q_k = lambda_k e^{z_k} / sum_j lambda_j e^{z_j}
/// computed as (z_k + log lambda_k) - logsumexp_j(z_j + log lambda_j) with
/// masked classes excluded from the denominator. Mean over the batch.
template <typename S>
TensorT<S> balanced_softmax_ce(TapeT<S>& tape, const TensorT<S>& logits,
                               std::span<const int> labels,
                               std::span<const S> lambda) {
  detail::check_logits_labels(logits, labels);
  const std::size_t batch = logits.shape()[0];
  const std::size_t n = logits.shape()[1];
  if (lambda.size() != n)
    throw ShapeError("one lambda per class required");

  std::vector<std::size_t> unmasked;
  unmasked.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (value_of(lambda[j]) < 0.0)
      throw ArgumentError("class weights must be non-negative");
    if (value_of(lambda[j]) > 0.0) unmasked.push_back(j);
  }
  if (unmasked.empty())
    throw ArgumentError("all classes are masked; loss undefined");

  std::vector<std::size_t> compact(n, static_cast<std::size_t>(-1));
  for (std::size_t k = 0; k < unmasked.size(); ++k) compact[unmasked[k]] = k;

  std::vector<int> remapped(labels.size());
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= n)
      throw InvalidLabelError("label " + std::to_string(y) + " out of range");
    if (compact[static_cast<std::size_t>(y)] == static_cast<std::size_t>(-1))
      throw InvalidLabelError("label " + std::to_string(y) +
                              " refers to a masked class");
    remapped[b] = static_cast<int>(compact[static_cast<std::size_t>(y)]);
  }

  const bool full = unmasked.size() == n;
  TensorT<S> active = full ? logits : tape.gather_cols(logits, unmasked);

  // Constant row of log lambda over the active classes; any tangent in
  // lambda rides along in the constant's scalar payload.
  using std::log;
  TensorT<S> offsets = TensorT<S>::zeros({batch, unmasked.size()});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < unmasked.size(); ++k)
      offsets[b * unmasked.size() + k] = log(lambda[unmasked[k]]);

  TensorT<S> shifted = tape.add(active, offsets);
  TensorT<S> lse = tape.logsumexp(shifted, 1);
  TensorT<S> picked = tape.take_per_row(shifted, remapped);
  TensorT<S> per_sample = tape.sub(lse, picked);
  return tape.mean(per_sample);
}

/// Plain softmax cross-entropy, mean over the batch.
template <typename S>
TensorT<S> standard_softmax_ce(TapeT<S>& tape, const TensorT<S>& logits,
                               std::span<const int> labels) {
  detail::check_logits_labels(logits, labels);
  const std::size_t n = logits.shape()[1];
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= n)
      throw InvalidLabelError("label " + std::to_string(y) + " out of range");
  TensorT<S> lse = tape.logsumexp(logits, 1);
  TensorT<S> picked = tape.take_per_row(logits, labels);
  return tape.mean(tape.sub(lse, picked));
}

/// Temperature-softened cross-entropy between the previous model's logits
/// and the current ones, restricted to the first n_old classes:
///   mean_b  -sum_k  p_hat_k log p_k  * T^2
/// with p, p_hat the softmaxes of z/T and z_hat/T over those classes.
/// `old_logits` comes from a frozen snapshot and contributes no gradient.
template <typename S>
TensorT<S> distillation_loss(TapeT<S>& tape, const TensorT<S>& new_logits,
                             const Tensor& old_logits,
                             const DistillConfig& cfg) {
  cfg.validate();
  if (new_logits.rank() != 2 || old_logits.rank() != 2)
    throw ShapeError("distillation expects [batch x classes] logits");
  const std::size_t batch = new_logits.shape()[0];
  const std::size_t n_new = new_logits.shape()[1];
  const std::size_t n_old = cfg.n_old;
  if (n_old == 0) throw ArgumentError("distillation needs n_old >= 1");
  if (n_old > n_new)
    throw ShapeError("distilled class range exceeds current logits width");
  if (old_logits.shape()[0] != batch || old_logits.shape()[1] < n_old)
    throw ShapeError("old logits narrower than the distilled range");

  const double T = cfg.temperature;

  // Teacher probabilities are plain constants.
  TensorT<S> teacher = TensorT<S>::zeros({batch, n_old});
  {
    const std::size_t w = old_logits.shape()[1];
    for (std::size_t b = 0; b < batch; ++b) {
      double mx = old_logits[b * w] / T;
      for (std::size_t k = 1; k < n_old; ++k)
        mx = std::max(mx, old_logits[b * w + k] / T);
      double denom = 0.0;
      for (std::size_t k = 0; k < n_old; ++k)
        denom += std::exp(old_logits[b * w + k] / T - mx);
      for (std::size_t k = 0; k < n_old; ++k)
        teacher[b * n_old + k] =
            S(std::exp(old_logits[b * w + k] / T - mx) / denom);
    }
  }

  std::vector<std::size_t> head(n_old);
  for (std::size_t k = 0; k < n_old; ++k) head[k] = k;
  TensorT<S> z = n_old == n_new ? new_logits : tape.gather_cols(new_logits, head);
  TensorT<S> zt = tape.scale(z, 1.0 / T);
  TensorT<S> lse = tape.logsumexp(zt, 1);
  TensorT<S> logp = tape.sub(zt, tape.tile_cols(lse, n_old));
  TensorT<S> weighted = tape.mul(teacher, logp);
  TensorT<S> per_sample = tape.negate(tape.sum(weighted, 1));
  return tape.scale(tape.mean(per_sample), T * T);
}

/// rho-weighted sum of distillation and classification losses with
/// rho = n_prev / n_cur. At the base step (n_prev == 0) the distillation
/// term is skipped entirely and the classification loss returned as is.
template <typename S>
TensorT<S> combined_loss(TapeT<S>& tape, const TensorT<S>& cls_loss,
                         const TensorT<S>* dist_loss, std::size_t n_prev,
                         std::size_t n_cur) {
  if (n_prev >= n_cur)
    throw ArgumentError("combined_loss: n_prev must be smaller than n_cur");
  if (n_prev == 0) return cls_loss;
  if (dist_loss == nullptr)
    throw ArgumentError("combined_loss: distillation term required when "
                        "previous classes exist");
  const double rho =
      static_cast<double>(n_prev) / static_cast<double>(n_cur);
  return tape.add(tape.scale(*dist_loss, rho), tape.scale(cls_loss, 1.0 - rho));
}

/// Standard CE with each sample weighted by mean_count / count[label]:
/// rarer classes contribute proportionally larger loss terms.
template <typename S>
TensorT<S> rescaled_softmax_ce(TapeT<S>& tape, const TensorT<S>& logits,
                               std::span<const int> labels,
                               std::span<const std::int64_t> counts) {
  detail::check_logits_labels(logits, labels);
  const std::size_t n = logits.shape()[1];
  if (counts.size() != n) throw ShapeError("one count per class required");

  double total = 0.0;
  std::size_t present = 0;
  for (std::int64_t c : counts) {
    if (c < 0) throw ArgumentError("class counts must be non-negative");
    if (c > 0) {
      total += static_cast<double>(c);
      ++present;
    }
  }
  if (present == 0) throw ArgumentError("rescaled CE needs non-empty counts");
  const double mean_count = total / static_cast<double>(present);

  TensorT<S> weights = TensorT<S>::zeros({labels.size()});
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= n)
      throw InvalidLabelError("label " + std::to_string(y) + " out of range");
    if (counts[static_cast<std::size_t>(y)] == 0)
      throw InvalidLabelError("label " + std::to_string(y) +
                              " has zero training count");
    weights[b] =
        S(mean_count / static_cast<double>(counts[static_cast<std::size_t>(y)]));
  }

  TensorT<S> lse = tape.logsumexp(logits, 1);
  TensorT<S> picked = tape.take_per_row(logits, labels);
  TensorT<S> per_sample = tape.sub(lse, picked);
  return tape.mean(tape.mul(per_sample, weights));
}

}  // namespace cil
