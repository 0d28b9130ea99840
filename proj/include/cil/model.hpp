// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cil/tape.hpp"

namespace cil {

/// One dense layer: y = x W + b, optionally followed by relu.
template <typename S>
struct MlpLayerT {
  TensorT<S> weight;  // [in x out]
  TensorT<S> bias;    // [out]
  bool relu{false};
};

using MlpLayer = MlpLayerT<double>;

/// Apply the first `n_apply` layers to a [batch x in] matrix.
template <typename S>
TensorT<S> mlp_apply(TapeT<S>& tape, const std::vector<MlpLayerT<S>>& layers,
                     const TensorT<S>& input, std::size_t n_apply) {
  TensorT<S> h = input;
  for (std::size_t l = 0; l < n_apply; ++l) {
    const auto& layer = layers[l];
    TensorT<S> lin = tape.matmul(h, layer.weight);
    TensorT<S> biased =
        tape.add(lin, tape.tile_rows(layer.bias, lin.shape()[0]));
    h = layer.relu ? tape.relu(biased) : biased;
  }
  return h;
}

class ClassifierModel;

/// Frozen deep copy of a model's parameters. Forward passes through a
/// snapshot never record gradients, and later training of the live model
/// leaves the snapshot untouched.
class ModelSnapshot {
 public:
  ModelSnapshot() = default;

  Tensor forward(const Tensor& batch) const;
  Tensor extract_features(const Tensor& batch) const;

  std::size_t num_classes() const;
  std::size_t input_dim() const;
  std::size_t feature_dim() const;

  const std::vector<MlpLayer>& layers() const { return layers_; }

 private:
  friend class ClassifierModel;
  std::vector<MlpLayer> layers_;
};

/// Fixed-architecture feature extractor with a linear output layer whose
/// class dimension grows over time. Hidden layers use relu; the head is
/// linear. All parameters are 64-bit floats and require gradients.
class ClassifierModel {
 public:
  /// dims = {input, hidden..., classes}. Weights start at seeded
  /// uniform(-s, s) with s = 1/sqrt(fan_in); biases start at zero.
  ClassifierModel(const std::vector<std::size_t>& dims, std::uint64_t seed);

  Tensor forward(Tape& tape, const Tensor& batch) const;

  /// Forward pass on an internal throwaway tape; no gradients recorded.
  Tensor forward_values(const Tensor& batch) const;

  /// Penultimate-layer activations (the inputs themselves for a
  /// head-only model). Never records gradients.
  Tensor extract_features(const Tensor& batch) const;

  /// Append k_new output columns drawn from seeded uniform
  /// (-init_scale, +init_scale); new bias entries are zero and every
  /// existing parameter is preserved bit-exactly.
  void expand_head(std::size_t k_new, double init_scale, std::uint64_t seed);

  /// Symmetric init scale for new head columns.
  double default_head_init_scale() const;

  ModelSnapshot snapshot() const;

  std::vector<Tensor> parameters();
  void zero_grad();

  std::size_t input_dim() const;
  std::size_t feature_dim() const;
  std::size_t num_classes() const;
  const std::vector<MlpLayer>& layers() const { return layers_; }

  /// Flat binary checkpoint; bit-exact round trip. Layout (native byte
  /// order): magic "CILMDL01", u32 version, u32 layer count, then per
  /// layer u32 rows, u32 cols, u8 relu flag, rows*cols f64 weights in
  /// row-major order, cols f64 biases.
  void save_checkpoint(const std::filesystem::path& path) const;
  static ClassifierModel load_checkpoint(const std::filesystem::path& path);

 private:
  ClassifierModel() = default;
  std::vector<MlpLayer> layers_;
};

/// Lift a model's parameters into scalar type S (fresh copies).
template <typename S>
std::vector<MlpLayerT<S>> lift_layers(const std::vector<MlpLayer>& layers,
                                      bool requires_grad) {
  std::vector<MlpLayerT<S>> out;
  out.reserve(layers.size());
  for (const auto& l : layers) {
    MlpLayerT<S> lifted;
    std::vector<S> w(l.weight.size()), b(l.bias.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = S(l.weight[i]);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = S(l.bias[i]);
    lifted.weight = TensorT<S>::from(l.weight.shape(), std::move(w));
    lifted.bias = TensorT<S>::from(l.bias.shape(), std::move(b));
    lifted.weight.set_requires_grad(requires_grad);
    lifted.bias.set_requires_grad(requires_grad);
    lifted.relu = l.relu;
    out.push_back(std::move(lifted));
  }
  return out;
}

}  // namespace cil
