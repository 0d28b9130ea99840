// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "cil/losses.hpp"
#include "cil/metrics.hpp"
#include "cil/model.hpp"
#include "cil/replay_memory.hpp"
#include "cil/rng.hpp"
#include "cil/schedule.hpp"

namespace cil {

/// Piecewise-constant schedule: lr at epoch e (0-based) is
/// initial * factor^(number of milestones <= e).
struct LrSchedule {
  double initial{0.1};
  std::vector<int> milestones;
  double factor{0.1};

  double at_epoch(int epoch) const {
    double lr = initial;
    for (int m : milestones)
      if (m <= epoch) lr *= factor;
    return lr;
  }
};

enum class Oversampling { none, memory, classes };

struct FinetuneConfig {
  int epochs{0};  // 0 disables the post-step finetuning pass
  double lr{0.01};
};

struct TrainConfig {
  int epochs{1};
  int batch_size{32};
  LrSchedule lr;
  double momentum{0.9};
  double weight_decay{0.0};
  LossMode loss_mode{LossMode::standard};
  double alpha{1.0};        // alpha mode: fixed old-class multiplier
  double epsilon{0.0};      // relaxed mode: old-class floor, absolute units
  double temperature{2.0};  // distillation
  Oversampling oversampling{Oversampling::none};
  FinetuneConfig finetune;
  bool memory_features_pre_update{true};  // herding feature source
  std::uint64_t seed{0};

  void validate() const;
};

/// State of the learned old-class coefficient. alpha restarts at 1 at the
/// beginning of every incremental step and stays inside the clip range.
struct MetaState {
  double alpha{1.0};
  double alpha_lr{0.01};
  int update_period{10};   // optimizer steps between alpha updates
  double val_fraction{0.1};
  double alpha_min{1e-3};
  double alpha_max{1.0};

  void validate() const;
  double clip(double a) const {
    return a < alpha_min ? alpha_min : (a > alpha_max ? alpha_max : a);
  }
};

/// SGD with momentum; L2 weight decay is folded into the gradient:
/// v = mu v + (g + wd p); p -= lr v.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, double momentum,
               double weight_decay);
  void step(double lr);
  void zero_grad();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
  double weight_decay_;
};

struct Batch {
  Tensor x;
  std::vector<int> y;
};

/// Everything a single optimization step needs to assemble its loss.
struct LossContext {
  LossMode mode{LossMode::standard};
  std::vector<double> lambda;               // balanced/alpha/relaxed modes
  std::vector<std::int64_t> counts;         // rescaled mode
  const ModelSnapshot* snapshot{nullptr};   // distillation teacher
  double temperature{2.0};
  std::size_t n_prev{0};
  std::size_t n_cur{0};
};

/// Forward + classification (+ distillation) loss for one batch.
Tensor step_loss(Tape& tape, const ClassifierModel& model, const Batch& batch,
                 const LossContext& ctx);

/// Cumulative-test-set metrics for the current model.
StepReport evaluate_model(const ClassifierModel& model,
                          const LabeledDataset& test, std::size_t base_count,
                          std::size_t newest_begin, int step_index);

/// Train step 0 on the base classes with the classification loss only.
StepReport run_base_step(ClassifierModel& model, const LabeledDataset& train,
                         const LabeledDataset& test, const TrainConfig& cfg);

struct StepContext {
  int step_index{1};
  std::size_t base_count{0};
};

/// One incremental step: seeded minibatches over the step data merged
/// with the replay memory, the configured classification loss against
/// current counts, distillation against the snapshot over the first
/// n_prev logits, rho-combined, SGD updates; afterwards the memory is
/// updated and the optional balanced finetuning pass runs.
StepReport run_incremental_step(ClassifierModel& model,
                                const ModelSnapshot& snapshot,
                                const LabeledDataset& step_data,
                                ReplayMemory& memory,
                                const LabeledDataset& source,
                                const LabeledDataset& test,
                                const TrainConfig& cfg,
                                const StepContext& step);

/// Split a merged training set into an optimization stream D and a
/// class-balanced validation pool B with exactly k samples per class,
/// k = floor(fraction * smallest old-class count).
struct ValidationSplit {
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> val_rows;
  std::size_t per_class{0};
};

ValidationSplit split_balanced_validation(const MergedTrainingSet& merged,
                                          double fraction,
                                          std::uint64_t seed);

/// Plain gradient step theta* = theta - lr * grad on lifted parameters;
/// no momentum and no weight decay enter here.
template <typename S>
std::vector<MlpLayerT<S>> virtual_sgd_step(
    const std::vector<MlpLayerT<S>>& layers, double lr) {
  std::vector<MlpLayerT<S>> out;
  out.reserve(layers.size());
  for (const auto& l : layers) {
    MlpLayerT<S> nl;
    std::vector<S> w(l.weight.size()), b(l.bias.size());
    const auto& wg = l.weight.grad();
    const auto& bg = l.bias.grad();
    for (std::size_t i = 0; i < w.size(); ++i)
      w[i] = l.weight[i] - S(lr) * wg[i];
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = l.bias[i] - S(lr) * bg[i];
    nl.weight = TensorT<S>::from(l.weight.shape(), std::move(w));
    nl.bias = TensorT<S>::from(l.bias.shape(), std::move(b));
    nl.relu = l.relu;
    out.push_back(std::move(nl));
  }
  return out;
}

/// One hypergradient step on alpha. A virtual parameter update
/// theta* = theta - inner_lr * grad(balanced loss(theta, alpha)) is
/// differentiated in forward mode with respect to alpha, the standard CE
/// validation loss is evaluated at theta*, and alpha descends its
/// derivative, clipped to the configured range. The live model is not
/// modified. Returns the hypergradient.
double meta_alpha_update(const ClassifierModel& model, const Batch& train_batch,
                         const Batch& val_batch,
                         const std::vector<std::int64_t>& counts,
                         const std::vector<std::uint8_t>& old_set,
                         const ModelSnapshot* snapshot, double temperature,
                         std::size_t n_prev, std::size_t n_cur,
                         MetaState& meta, double inner_lr);

/// Incremental step driven by the learned alpha: alpha resets to 1, the
/// merged set is split into D/B, and every update_period-th optimizer
/// step refreshes alpha on a balanced batch before the real update runs
/// with the current alpha. The report carries the alpha trajectory.
StepReport run_meta_incremental_step(ClassifierModel& model,
                                     const ModelSnapshot& snapshot,
                                     const LabeledDataset& step_data,
                                     ReplayMemory& memory,
                                     const LabeledDataset& source,
                                     const LabeledDataset& test,
                                     const TrainConfig& cfg, MetaState& meta,
                                     const StepContext& step);

/// Batch index streams for one epoch.
std::vector<std::vector<std::size_t>> epoch_batches(
    const std::vector<std::size_t>& rows, std::size_t batch_size, Rng& rng);

/// memory mode: every batch takes half its slots from replayed rows and
/// half from new rows; class mode: every slot first draws a class
/// uniformly, then a sample of that class.
std::vector<std::vector<std::size_t>> oversampled_batches(
    const MergedTrainingSet& merged, Oversampling mode, std::size_t batch_size,
    Rng& rng);

struct FinetuneSpec {
  int epochs{0};
  double lr{0.01};
  std::size_t batch_size{32};
  double momentum{0.9};
  double weight_decay{0.0};
  std::uint64_t seed{0};
};

/// Post-step pass over a small balanced set: the memory quota per class,
/// replayed classes from their exemplars, remaining classes downsampled
/// from new_data. Standard CE at the given small lr. epochs == 0 is a
/// no-op.
void balanced_finetune(ClassifierModel& model, const ReplayMemory& memory,
                       const LabeledDataset& source,
                       const LabeledDataset& new_data,
                       const FinetuneSpec& spec);

/// Rows for the balanced finetuning set, exposed for inspection.
std::vector<std::pair<const LabeledDataset*, std::size_t>>
balanced_finetune_rows(const ReplayMemory& memory, const LabeledDataset& source,
                       const LabeledDataset& new_data, std::uint64_t seed);

}  // namespace cil
