// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#include "cil/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cil/dual.hpp"

namespace cil {

void TrainConfig::validate() const {
  if (epochs < 1) throw ArgumentError("epochs must be >= 1");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (!(lr.initial > 0.0)) throw ArgumentError("initial lr must be positive");
  if (!(lr.factor > 0.0) || lr.factor > 1.0)
    throw ArgumentError("lr decay factor must lie in (0, 1]");
  if (momentum < 0.0 || momentum >= 1.0)
    throw ArgumentError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ArgumentError("weight decay must be >= 0");
  if (!(temperature > 0.0))
    throw ArgumentError("distillation temperature must be positive");
  if (alpha < 0.0 || alpha > 1.0) throw ArgumentError("alpha must lie in [0, 1]");
  if (epsilon < 0.0) throw ArgumentError("epsilon must be >= 0");
  if (finetune.epochs < 0) throw ArgumentError("finetune epochs must be >= 0");
}

void MetaState::validate() const {
  if (!(alpha_lr >= 0.0)) throw ArgumentError("alpha lr must be >= 0");
  if (update_period < 1) throw ArgumentError("update period must be >= 1");
  if (!(val_fraction > 0.0) || val_fraction >= 1.0)
    throw ArgumentError("validation fraction must lie in (0, 1)");
  if (!(alpha_min > 0.0) || alpha_min > alpha_max || alpha_max > 1.0)
    throw ArgumentError("alpha clip range must satisfy 0 < min <= max <= 1");
}

// ---- optimizer -------------------------------------------------------------

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, double momentum,
                           double weight_decay)
    : params_(std::move(params)),
      momentum_(momentum),
      weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (auto& p : params_) velocity_.emplace_back(p.size(), 0.0);
}

void SgdOptimizer::step(double lr) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    auto& v = velocity_[k];
    const auto& g = p.grad();
    auto& vals = p.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double update = g[i] + weight_decay_ * vals[i];
      v[i] = momentum_ * v[i] + update;
      vals[i] -= lr * v[i];
    }
  }
}

void SgdOptimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// ---- batching --------------------------------------------------------------

std::vector<std::vector<std::size_t>> epoch_batches(
    const std::vector<std::size_t>& rows, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order = rows;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t pos = 0; pos < order.size(); pos += batch_size) {
    const std::size_t end = std::min(order.size(), pos + batch_size);
    batches.emplace_back(order.begin() + pos, order.begin() + end);
  }
  return batches;
}

std::vector<std::vector<std::size_t>> oversampled_batches(
    const MergedTrainingSet& merged, Oversampling mode, std::size_t batch_size,
    Rng& rng) {
  if (batch_size == 0) throw ArgumentError("batch size must be >= 1");
  std::vector<std::vector<std::size_t>> batches;
  if (mode == Oversampling::memory) {
    if (merged.old_rows.empty())
      throw ArgumentError("memory oversampling requires replayed samples");
    if (merged.new_rows.empty())
      throw ArgumentError("memory oversampling requires new samples");
    const std::size_t half_old = batch_size / 2;
    const std::size_t half_new = batch_size - half_old;
    std::vector<std::size_t> new_order = merged.new_rows;
    rng.shuffle(new_order);
    std::vector<std::size_t> old_order = merged.old_rows;
    rng.shuffle(old_order);
    std::size_t old_pos = 0;
    const std::size_t n_batches =
        (new_order.size() + half_new - 1) / half_new;
    std::size_t new_pos = 0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      std::vector<std::size_t> batch;
      batch.reserve(batch_size);
      for (std::size_t s = 0; s < half_new; ++s) {
        if (new_pos == new_order.size())
          batch.push_back(
              merged.new_rows[rng.below(merged.new_rows.size())]);
        else
          batch.push_back(new_order[new_pos++]);
      }
      for (std::size_t s = 0; s < half_old; ++s) {
        if (old_pos == old_order.size()) {
          rng.shuffle(old_order);
          old_pos = 0;
        }
        batch.push_back(old_order[old_pos++]);
      }
      batches.push_back(std::move(batch));
    }
    return batches;
  }
  if (mode == Oversampling::classes) {
    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < merged.data.per_class.size(); ++c)
      if (!merged.data.per_class[c].empty()) present.push_back(c);
    if (present.empty()) throw ArgumentError("no classes to sample from");
    const std::size_t n_batches =
        (merged.data.size() + batch_size - 1) / batch_size;
    for (std::size_t b = 0; b < n_batches; ++b) {
      std::vector<std::size_t> batch;
      batch.reserve(batch_size);
      for (std::size_t s = 0; s < batch_size; ++s) {
        const std::size_t c = present[rng.below(present.size())];
        const auto& pool = merged.data.per_class[c];
        batch.push_back(pool[rng.below(pool.size())]);
      }
      batches.push_back(std::move(batch));
    }
    return batches;
  }
  throw ArgumentError("oversampled_batches called without a sampling mode");
}

// ---- loss assembly ---------------------------------------------------------

Tensor step_loss(Tape& tape, const ClassifierModel& model, const Batch& batch,
                 const LossContext& ctx) {
  Tensor logits = model.forward(tape, batch.x);
  Tensor cls;
  switch (ctx.mode) {
    case LossMode::standard:
      cls = standard_softmax_ce(tape, logits, batch.y);
      break;
    case LossMode::balanced:
    case LossMode::alpha:
    case LossMode::relaxed:
      cls = balanced_softmax_ce<double>(tape, logits, batch.y, ctx.lambda);
      break;
    case LossMode::rescaled:
      cls = rescaled_softmax_ce<double>(tape, logits, batch.y, ctx.counts);
      break;
  }
  if (ctx.snapshot != nullptr && ctx.n_prev > 0) {
    Tensor old_logits = ctx.snapshot->forward(batch.x);
    DistillConfig dcfg{ctx.temperature, ctx.n_prev};
    Tensor dist = distillation_loss<double>(tape, logits, old_logits, dcfg);
    return combined_loss<double>(tape, cls, &dist, ctx.n_prev, ctx.n_cur);
  }
  return cls;
}

namespace {

void check_finite_loss(const Tensor& loss) {
  if (!std::isfinite(loss[0]))
    throw NumericError("non-finite training loss");
}

LossContext make_context(const TrainConfig& cfg, const MergedTrainingSet& merged,
                         const ModelSnapshot* snapshot, std::size_t n_prev,
                         std::size_t n_cur) {
  LossContext ctx;
  ctx.mode = cfg.loss_mode;
  ctx.counts = merged.counts;
  ctx.snapshot = snapshot;
  ctx.temperature = cfg.temperature;
  ctx.n_prev = n_prev;
  ctx.n_cur = n_cur;
  if (cfg.loss_mode == LossMode::balanced || cfg.loss_mode == LossMode::alpha ||
      cfg.loss_mode == LossMode::relaxed) {
    ClassPrior prior;
    prior.counts = merged.counts;
    prior.old_set = merged.old_set;
    prior.alpha = cfg.alpha;
    prior.epsilon = cfg.epsilon;
    ctx.lambda = build_lambda(prior, cfg.loss_mode);
  }
  return ctx;
}

std::vector<std::vector<std::size_t>> batches_for_epoch(
    const MergedTrainingSet& merged, const std::vector<std::size_t>& rows,
    const TrainConfig& cfg, Rng& rng) {
  if (cfg.oversampling == Oversampling::none)
    return epoch_batches(rows, static_cast<std::size_t>(cfg.batch_size), rng);
  return oversampled_batches(merged, cfg.oversampling,
                             static_cast<std::size_t>(cfg.batch_size), rng);
}

std::vector<int> new_classes_of_step(const LabeledDataset& step_data,
                                     std::size_t lo, std::size_t hi) {
  std::vector<int> classes;
  for (std::size_t c = lo; c < hi && c < step_data.per_class.size(); ++c)
    if (!step_data.per_class[c].empty()) classes.push_back(static_cast<int>(c));
  return classes;
}

void update_memory_after_step(ReplayMemory& memory,
                              const LabeledDataset& source,
                              const std::vector<int>& new_classes,
                              const ClassifierModel& model,
                              const ModelSnapshot& feature_snapshot,
                              bool pre_update) {
  auto features_of = [&](const Tensor& x) {
    return pre_update ? feature_snapshot.extract_features(x)
                      : model.extract_features(x);
  };
  memory.update(source, new_classes, features_of);
}

}  // namespace

// ---- evaluation ------------------------------------------------------------

StepReport evaluate_model(const ClassifierModel& model,
                          const LabeledDataset& test, std::size_t base_count,
                          std::size_t newest_begin, int step_index) {
  const std::size_t n = model.num_classes();
  if (test.num_classes > n)
    throw ShapeError("test set has more classes than the model");
  StepReport report;
  report.step = step_index;
  report.num_classes = n;
  report.top1 = {0, 0};
  report.top5 = {0, 0};
  report.confusion.assign(n * n, 0);

  const std::size_t k5 = std::min<std::size_t>(5, n);
  const std::size_t chunk = 256;
  std::vector<std::size_t> rows(test.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  for (std::size_t pos = 0; pos < rows.size(); pos += chunk) {
    const std::size_t end = std::min(rows.size(), pos + chunk);
    std::vector<std::size_t> idx(rows.begin() + pos, rows.begin() + end);
    auto [x, y] = test.batch(idx);
    Tensor logits = model.forward_values(x);
    const std::size_t b = idx.size();
    std::vector<int> preds(b);
    for (std::size_t i = 0; i < b; ++i) {
      std::span<const double> row(&logits[i * n], n);
      preds[i] = static_cast<int>(argmax_row(row));
    }
    const Fraction t1 = top_k_accuracy_counts(logits, y, 1);
    const Fraction t5 = top_k_accuracy_counts(logits, y, k5);
    report.top1.correct += t1.correct;
    report.top1.total += t1.total;
    report.top5.correct += t5.correct;
    report.top5.total += t5.total;
    const auto conf = confusion_matrix(preds, y, n);
    for (std::size_t i = 0; i < conf.size(); ++i) report.confusion[i] += conf[i];
  }

  report.per_class.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    Fraction f;
    f.correct = report.confusion[c * n + c];
    for (std::size_t j = 0; j < n; ++j) f.total += report.confusion[c * n + j];
    report.per_class[c] = f;
  }
  const std::size_t base_end = std::min(base_count, n);
  report.base_group = group_accuracy_counts(report.confusion, n, 0, base_end);
  report.newest_group =
      group_accuracy_counts(report.confusion, n, newest_begin, n);
  report.check();
  return report;
}

// ---- base step -------------------------------------------------------------

StepReport run_base_step(ClassifierModel& model, const LabeledDataset& train,
                         const LabeledDataset& test, const TrainConfig& cfg) {
  cfg.validate();
  if (train.size() == 0) throw ArgumentError("base step has no training data");

  MergedTrainingSet merged;
  merged.data = train;
  merged.counts.assign(model.num_classes(), 0);
  merged.old_set.assign(model.num_classes(), 0);
  for (int y : train.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= model.num_classes())
      throw ArgumentError("base label outside the model head");
    merged.counts[static_cast<std::size_t>(y)] += 1;
  }
  for (std::size_t i = 0; i < train.size(); ++i) merged.new_rows.push_back(i);

  const LossContext ctx =
      make_context(cfg, merged, nullptr, 0, model.num_classes());

  // No replay exists yet, so the oversampling modes have nothing to
  // rebalance; the base step always streams plain shuffled batches.
  TrainConfig base_cfg = cfg;
  base_cfg.oversampling = Oversampling::none;

  Rng rng(mix_seed(cfg.seed, 0x62617365));  // batching stream
  SgdOptimizer opt(model.parameters(), cfg.momentum, cfg.weight_decay);
  std::vector<std::size_t> rows = merged.new_rows;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr.at_epoch(epoch);
    for (const auto& batch_rows :
         batches_for_epoch(merged, rows, base_cfg, rng)) {
      auto [x, y] = merged.data.batch(batch_rows);
      Tape tape;
      Tensor loss = step_loss(tape, model, {std::move(x), std::move(y)}, ctx);
      check_finite_loss(loss);
      opt.zero_grad();
      tape.backward(loss);
      opt.step(lr);
    }
  }
  return evaluate_model(model, test, test.num_classes, 0, 0);
}

// ---- incremental step ------------------------------------------------------

namespace {

void check_incremental_shapes(const ClassifierModel& model,
                              const ModelSnapshot& snapshot) {
  if (snapshot.input_dim() != model.input_dim())
    throw ShapeError("snapshot input width differs from the live model");
  if (snapshot.num_classes() >= model.num_classes())
    throw ShapeError(
        "snapshot head is not narrower than the live model; expand the head "
        "before the incremental step");
}

}  // namespace

StepReport run_incremental_step(ClassifierModel& model,
                                const ModelSnapshot& snapshot,
                                const LabeledDataset& step_data,
                                ReplayMemory& memory,
                                const LabeledDataset& source,
                                const LabeledDataset& test,
                                const TrainConfig& cfg,
                                const StepContext& step) {
  cfg.validate();
  check_incremental_shapes(model, snapshot);
  const std::size_t n_prev = snapshot.num_classes();
  const std::size_t n_cur = model.num_classes();

  MergedTrainingSet merged = training_set(step_data, memory, source, n_cur);
  const LossContext ctx = make_context(cfg, merged, &snapshot, n_prev, n_cur);

  Rng rng(mix_seed(cfg.seed, 0x696e6372));
  SgdOptimizer opt(model.parameters(), cfg.momentum, cfg.weight_decay);
  std::vector<std::size_t> rows(merged.data.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr.at_epoch(epoch);
    for (const auto& batch_rows : batches_for_epoch(merged, rows, cfg, rng)) {
      auto [x, y] = merged.data.batch(batch_rows);
      Tape tape;
      Tensor loss = step_loss(tape, model, {std::move(x), std::move(y)}, ctx);
      check_finite_loss(loss);
      opt.zero_grad();
      tape.backward(loss);
      opt.step(lr);
    }
  }

  update_memory_after_step(memory, source,
                           new_classes_of_step(step_data, n_prev, n_cur), model,
                           snapshot, cfg.memory_features_pre_update);

  if (cfg.finetune.epochs > 0) {
    FinetuneSpec spec;
    spec.epochs = cfg.finetune.epochs;
    spec.lr = cfg.finetune.lr;
    spec.batch_size = static_cast<std::size_t>(cfg.batch_size);
    spec.momentum = cfg.momentum;
    spec.weight_decay = cfg.weight_decay;
    spec.seed = mix_seed(cfg.seed, 0x66746e65);
    balanced_finetune(model, memory, source, step_data, spec);
  }

  return evaluate_model(model, test, step.base_count, n_prev, step.step_index);
}

// ---- balanced validation split ----------------------------------------------

ValidationSplit split_balanced_validation(const MergedTrainingSet& merged,
                                          double fraction,
                                          std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction >= 1.0)
    throw ArgumentError("validation fraction must lie in (0, 1)");
  std::int64_t min_old = -1;
  for (std::size_t c = 0; c < merged.counts.size(); ++c)
    if (merged.old_set[c] && merged.counts[c] > 0)
      min_old = min_old < 0 ? merged.counts[c]
                            : std::min(min_old, merged.counts[c]);
  if (min_old < 0) {
    // No replayed classes; fall back to the rarest class present.
    for (std::int64_t c : merged.counts)
      if (c > 0) min_old = min_old < 0 ? c : std::min(min_old, c);
  }
  if (min_old <= 0)
    throw ArgumentError("validation split needs populated classes");
  const auto k = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(min_old)));
  if (k == 0)
    throw ArgumentError(
        "validation split is empty: floor(fraction * smallest class count) "
        "is zero, so the learned-alpha mode is unavailable here");

  ValidationSplit split;
  split.per_class = k;
  Rng rng(mix_seed(seed, 0x73706c69));
  for (std::size_t c = 0; c < merged.data.per_class.size(); ++c) {
    std::vector<std::size_t> rows = merged.data.per_class[c];
    if (rows.empty()) continue;
    if (rows.size() <= k)
      throw ArgumentError("class " + std::to_string(c) +
                          " has too few samples for the validation split");
    rng.shuffle(rows);
    for (std::size_t i = 0; i < rows.size(); ++i)
      (i < k ? split.val_rows : split.train_rows).push_back(rows[i]);
  }
  std::sort(split.train_rows.begin(), split.train_rows.end());
  std::sort(split.val_rows.begin(), split.val_rows.end());
  return split;
}

// ---- hypergradient ----------------------------------------------------------

double meta_alpha_update(const ClassifierModel& model, const Batch& train_batch,
                         const Batch& val_batch,
                         const std::vector<std::int64_t>& counts,
                         const std::vector<std::uint8_t>& old_set,
                         const ModelSnapshot* snapshot, double temperature,
                         std::size_t n_prev, std::size_t n_cur,
                         MetaState& meta, double inner_lr) {
  meta.validate();
  if (!(inner_lr >= 0.0)) throw ArgumentError("inner lr must be >= 0");

  // Forward-mode tangent seeded on alpha rides through the loss, the
  // reverse sweep, the virtual update and the validation forward pass.
  const Dual alpha(meta.alpha, 1.0);
  auto lifted = lift_layers<Dual>(model.layers(), /*requires_grad=*/true);
  std::vector<Dual> lambda = lambda_with_alpha<Dual>(counts, old_set, alpha);

  TapeT<Dual> tape;
  TensorT<Dual> x = TensorT<Dual>::zeros(train_batch.x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = Dual(train_batch.x[i]);
  TensorT<Dual> logits = mlp_apply(tape, lifted, x, lifted.size());
  TensorT<Dual> cls =
      balanced_softmax_ce<Dual>(tape, logits, train_batch.y, lambda);
  TensorT<Dual> total = cls;
  if (snapshot != nullptr && n_prev > 0) {
    Tensor old_logits = snapshot->forward(train_batch.x);
    DistillConfig dcfg{temperature, n_prev};
    TensorT<Dual> dist =
        distillation_loss<Dual>(tape, logits, old_logits, dcfg);
    total = combined_loss<Dual>(tape, cls, &dist, n_prev, n_cur);
  }
  tape.backward(total);

  auto virtual_layers = virtual_sgd_step<Dual>(lifted, inner_lr);

  TapeT<Dual> val_tape;
  TensorT<Dual> vx = TensorT<Dual>::zeros(val_batch.x.shape());
  for (std::size_t i = 0; i < vx.size(); ++i) vx[i] = Dual(val_batch.x[i]);
  TensorT<Dual> vlogits =
      mlp_apply(val_tape, virtual_layers, vx, virtual_layers.size());
  TensorT<Dual> vloss = standard_softmax_ce<Dual>(val_tape, vlogits, val_batch.y);

  const Dual out = vloss[0];
  if (!is_finite(out))
    throw NumericError("non-finite hypergradient; alpha left unchanged");
  const double hypergradient = out.dot;
  meta.alpha = meta.clip(meta.alpha - meta.alpha_lr * hypergradient);
  return hypergradient;
}

// ---- meta incremental step ---------------------------------------------------

namespace {

/// Cyclic class-balanced batches over the validation pool, reshuffled per
/// pass through each class list.
class BalancedBatchCycler {
 public:
  BalancedBatchCycler(const LabeledDataset& data,
                      const std::vector<std::size_t>& val_rows,
                      std::uint64_t seed)
      : data_(data), rng_(seed) {
    for (std::size_t r : val_rows)
      pools_[static_cast<std::size_t>(data.labels[r])].push_back(r);
    for (auto& [c, rows] : pools_) rng_.shuffle(rows);
  }

  Batch next(std::size_t per_class) {
    std::vector<std::size_t> rows;
    for (auto& [c, pool] : pools_) {
      auto& pos = cursor_[c];
      for (std::size_t i = 0; i < std::min(per_class, pool.size()); ++i) {
        if (pos == pool.size()) {
          rng_.shuffle(pool);
          pos = 0;
        }
        rows.push_back(pool[pos++]);
      }
    }
    auto [x, y] = data_.batch(rows);
    return {std::move(x), std::move(y)};
  }

  std::size_t num_classes() const { return pools_.size(); }

 private:
  const LabeledDataset& data_;
  Rng rng_;
  std::map<std::size_t, std::vector<std::size_t>> pools_;
  std::map<std::size_t, std::size_t> cursor_;
};

}  // namespace

StepReport run_meta_incremental_step(ClassifierModel& model,
                                     const ModelSnapshot& snapshot,
                                     const LabeledDataset& step_data,
                                     ReplayMemory& memory,
                                     const LabeledDataset& source,
                                     const LabeledDataset& test,
                                     const TrainConfig& cfg, MetaState& meta,
                                     const StepContext& step) {
  cfg.validate();
  meta.validate();
  check_incremental_shapes(model, snapshot);
  if (cfg.oversampling != Oversampling::none)
    throw ArgumentError(
        "learned-alpha training draws from its own split and cannot be "
        "combined with oversampling");
  const std::size_t n_prev = snapshot.num_classes();
  const std::size_t n_cur = model.num_classes();

  MergedTrainingSet merged = training_set(step_data, memory, source, n_cur);
  ValidationSplit split = split_balanced_validation(
      merged, meta.val_fraction, mix_seed(cfg.seed, 0x6d657461));

  meta.alpha = 1.0;  // restarts every incremental step
  std::vector<double> trajectory;

  LossContext ctx = make_context(cfg, merged, &snapshot, n_prev, n_cur);
  ctx.mode = LossMode::alpha;
  ctx.lambda = lambda_with_alpha<double>(merged.counts, merged.old_set,
                                         meta.alpha);

  BalancedBatchCycler cycler(merged.data, split.val_rows,
                             mix_seed(cfg.seed, 0x6379636c));
  const std::size_t val_per_class = std::max<std::size_t>(
      1, static_cast<std::size_t>(cfg.batch_size) /
             std::max<std::size_t>(1, cycler.num_classes()));

  Rng rng(mix_seed(cfg.seed, 0x696e6372));
  SgdOptimizer opt(model.parameters(), cfg.momentum, cfg.weight_decay);
  std::size_t global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr.at_epoch(epoch);
    for (const auto& batch_rows :
         batches_for_epoch(merged, split.train_rows, cfg, rng)) {
      auto [x, y] = merged.data.batch(batch_rows);
      Batch batch{std::move(x), std::move(y)};
      ++global_step;
      if (global_step % static_cast<std::size_t>(meta.update_period) == 0) {
        Batch val = cycler.next(val_per_class);
        meta_alpha_update(model, batch, val, merged.counts, merged.old_set,
                          &snapshot, cfg.temperature, n_prev, n_cur, meta, lr);
        trajectory.push_back(meta.alpha);
        ctx.lambda = lambda_with_alpha<double>(merged.counts, merged.old_set,
                                               meta.alpha);
      }
      Tape tape;
      Tensor loss = step_loss(tape, model, batch, ctx);
      check_finite_loss(loss);
      opt.zero_grad();
      tape.backward(loss);
      opt.step(lr);
    }
  }

  update_memory_after_step(memory, source,
                           new_classes_of_step(step_data, n_prev, n_cur), model,
                           snapshot, cfg.memory_features_pre_update);

  if (cfg.finetune.epochs > 0) {
    FinetuneSpec spec;
    spec.epochs = cfg.finetune.epochs;
    spec.lr = cfg.finetune.lr;
    spec.batch_size = static_cast<std::size_t>(cfg.batch_size);
    spec.momentum = cfg.momentum;
    spec.weight_decay = cfg.weight_decay;
    spec.seed = mix_seed(cfg.seed, 0x66746e65);
    balanced_finetune(model, memory, source, step_data, spec);
  }

  StepReport report =
      evaluate_model(model, test, step.base_count, n_prev, step.step_index);
  report.alpha_trajectory = std::move(trajectory);
  return report;
}

// ---- balanced finetuning -----------------------------------------------------

std::vector<std::pair<const LabeledDataset*, std::size_t>>
balanced_finetune_rows(const ReplayMemory& memory, const LabeledDataset& source,
                       const LabeledDataset& new_data, std::uint64_t seed) {
  const std::size_t q = memory.quota();
  if (q == 0) throw ArgumentError("finetuning needs a positive memory quota");

  std::vector<std::pair<const LabeledDataset*, std::size_t>> rows;
  for (const auto& [cls, exemplars] : memory.store()) {
    if (exemplars.size() < q)
      throw ArgumentError("class " + std::to_string(cls) +
                          " holds fewer exemplars than the quota");
    for (std::size_t i = 0; i < q; ++i) rows.emplace_back(&source, exemplars[i]);
  }
  Rng rng(mix_seed(seed, 0x62616c66));
  for (std::size_t c = 0; c < new_data.per_class.size(); ++c) {
    if (new_data.per_class[c].empty() || memory.contains(static_cast<int>(c)))
      continue;
    const auto& pool = new_data.per_class[c];
    if (pool.size() < q)
      throw ArgumentError("class " + std::to_string(c) +
                          " has fewer samples than the quota");
    for (std::size_t k : rng.sample_without_replacement(pool.size(), q))
      rows.emplace_back(&new_data, pool[k]);
  }
  return rows;
}

void balanced_finetune(ClassifierModel& model, const ReplayMemory& memory,
                       const LabeledDataset& source,
                       const LabeledDataset& new_data,
                       const FinetuneSpec& spec) {
  if (spec.epochs < 0) throw ArgumentError("finetune epochs must be >= 0");
  if (spec.epochs == 0) return;
  if (spec.batch_size == 0) throw ArgumentError("batch size must be >= 1");

  const auto rows = balanced_finetune_rows(memory, source, new_data, spec.seed);
  std::vector<double> xs;
  std::vector<int> ys;
  const std::size_t dim = source.dim;
  xs.reserve(rows.size() * dim);
  for (const auto& [ds, r] : rows) {
    xs.insert(xs.end(), ds->samples.begin() + r * dim,
              ds->samples.begin() + (r + 1) * dim);
    ys.push_back(ds->labels[r]);
  }

  Rng rng(mix_seed(spec.seed, 0x62616c62));
  SgdOptimizer opt(model.parameters(), spec.momentum, spec.weight_decay);
  std::vector<std::size_t> all(ys.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    for (const auto& batch_rows : epoch_batches(all, spec.batch_size, rng)) {
      std::vector<double> bx(batch_rows.size() * dim);
      std::vector<int> by(batch_rows.size());
      for (std::size_t k = 0; k < batch_rows.size(); ++k) {
        std::copy_n(xs.begin() + batch_rows[k] * dim, dim,
                    bx.begin() + k * dim);
        by[k] = ys[batch_rows[k]];
      }
      Tape tape;
      Tensor x = Tensor::from({batch_rows.size(), dim}, std::move(bx));
      Tensor logits = model.forward(tape, x);
      Tensor loss = standard_softmax_ce(tape, logits, by);
      check_finite_loss(loss);
      opt.zero_grad();
      tape.backward(loss);
      opt.step(spec.lr);
    }
  }
}

}  // namespace cil
