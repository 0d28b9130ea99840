// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#include "cil/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "cil/rng.hpp"

namespace cil {

namespace {

constexpr char kMagic[8] = {'C', 'I', 'L', 'M', 'D', 'L', '0', '1'};
constexpr std::uint32_t kVersion = 1;

Tensor no_grad(const Tensor& t) {
  Tensor c = t.clone();
  c.set_requires_grad(false);
  return c;
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("checkpoint truncated");
  return v;
}

}  // namespace

// ---- ModelSnapshot -------------------------------------------------------

Tensor ModelSnapshot::forward(const Tensor& batch) const {
  Tape tape;
  return mlp_apply(tape, layers_, batch, layers_.size());
}

Tensor ModelSnapshot::extract_features(const Tensor& batch) const {
  if (layers_.size() <= 1) return batch.clone();
  Tape tape;
  return mlp_apply(tape, layers_, batch, layers_.size() - 1);
}

std::size_t ModelSnapshot::num_classes() const {
  return layers_.back().weight.shape()[1];
}
std::size_t ModelSnapshot::input_dim() const {
  return layers_.front().weight.shape()[0];
}
std::size_t ModelSnapshot::feature_dim() const {
  return layers_.back().weight.shape()[0];
}

// ---- ClassifierModel -----------------------------------------------------

ClassifierModel::ClassifierModel(const std::vector<std::size_t>& dims,
                                 std::uint64_t seed) {
  if (dims.size() < 2)
    throw ArgumentError("model needs at least input and output dims");
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t in = dims[l], out = dims[l + 1];
    if (in == 0 || out == 0)
      throw ArgumentError("layer dimensions must be positive");
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> w(in * out);
    for (double& v : w) v = rng.uniform(-s, s);
    MlpLayer layer;
    layer.weight = Tensor::param({in, out}, std::move(w));
    layer.bias = Tensor::param({out}, std::vector<double>(out, 0.0));
    layer.relu = l + 2 < dims.size();  // hidden layers only
    layers_.push_back(std::move(layer));
  }
}

Tensor ClassifierModel::forward(Tape& tape, const Tensor& batch) const {
  if (batch.rank() != 2 || batch.shape()[1] != input_dim())
    throw ShapeError("forward expects [batch x " +
                     std::to_string(input_dim()) + "] input, got " +
                     shape_string(batch.shape()));
  return mlp_apply(tape, layers_, batch, layers_.size());
}

Tensor ClassifierModel::forward_values(const Tensor& batch) const {
  Tape tape;
  std::vector<MlpLayer> frozen;
  frozen.reserve(layers_.size());
  for (const auto& l : layers_)
    frozen.push_back({no_grad(l.weight), no_grad(l.bias), l.relu});
  if (batch.rank() != 2 || batch.shape()[1] != input_dim())
    throw ShapeError("forward expects [batch x " +
                     std::to_string(input_dim()) + "] input");
  return mlp_apply(tape, frozen, batch, frozen.size());
}

Tensor ClassifierModel::extract_features(const Tensor& batch) const {
  if (batch.rank() != 2 || batch.shape()[1] != input_dim())
    throw ShapeError("extract_features expects [batch x " +
                     std::to_string(input_dim()) + "] input");
  if (layers_.size() <= 1) return batch.clone();
  Tape tape;
  std::vector<MlpLayer> frozen;
  frozen.reserve(layers_.size() - 1);
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l)
    frozen.push_back(
        {no_grad(layers_[l].weight), no_grad(layers_[l].bias), layers_[l].relu});
  return mlp_apply(tape, frozen, batch, frozen.size());
}

void ClassifierModel::expand_head(std::size_t k_new, double init_scale,
                                  std::uint64_t seed) {
  if (k_new == 0) throw ArgumentError("expand_head: k_new must be >= 1");
  if (init_scale < 0.0)
    throw ArgumentError("expand_head: init_scale must be >= 0");
  MlpLayer& head = layers_.back();
  const std::size_t f = head.weight.shape()[0];
  const std::size_t n_old = head.weight.shape()[1];
  const std::size_t n_new = n_old + k_new;

  Rng rng(seed);
  std::vector<double> w(f * n_new);
  for (std::size_t r = 0; r < f; ++r) {
    for (std::size_t c = 0; c < n_old; ++c)
      w[r * n_new + c] = head.weight[r * n_old + c];
    for (std::size_t c = n_old; c < n_new; ++c)
      w[r * n_new + c] = rng.uniform(-init_scale, init_scale);
  }
  std::vector<double> b(n_new, 0.0);
  for (std::size_t c = 0; c < n_old; ++c) b[c] = head.bias[c];

  head.weight = Tensor::param({f, n_new}, std::move(w));
  head.bias = Tensor::param({n_new}, std::move(b));
}

double ClassifierModel::default_head_init_scale() const {
  return 1.0 / std::sqrt(static_cast<double>(feature_dim()));
}

ModelSnapshot ClassifierModel::snapshot() const {
  ModelSnapshot snap;
  snap.layers_.reserve(layers_.size());
  for (const auto& l : layers_)
    snap.layers_.push_back({no_grad(l.weight), no_grad(l.bias), l.relu});
  return snap;
}

std::vector<Tensor> ClassifierModel::parameters() {
  std::vector<Tensor> out;
  out.reserve(layers_.size() * 2);
  for (auto& l : layers_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

void ClassifierModel::zero_grad() {
  for (auto& l : layers_) {
    l.weight.zero_grad();
    l.bias.zero_grad();
  }
}

std::size_t ClassifierModel::input_dim() const {
  return layers_.front().weight.shape()[0];
}
std::size_t ClassifierModel::feature_dim() const {
  return layers_.back().weight.shape()[0];
}
std::size_t ClassifierModel::num_classes() const {
  return layers_.back().weight.shape()[1];
}

void ClassifierModel::save_checkpoint(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open checkpoint for writing: " +
                             path.string());
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, kVersion);
  write_pod(os, static_cast<std::uint32_t>(layers_.size()));
  for (const auto& l : layers_) {
    write_pod(os, static_cast<std::uint32_t>(l.weight.shape()[0]));
    write_pod(os, static_cast<std::uint32_t>(l.weight.shape()[1]));
    write_pod(os, static_cast<std::uint8_t>(l.relu ? 1 : 0));
    os.write(reinterpret_cast<const char*>(l.weight.values().data()),
             static_cast<std::streamsize>(l.weight.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(l.bias.values().data()),
             static_cast<std::streamsize>(l.bias.size() * sizeof(double)));
  }
  if (!os) throw FormatError("checkpoint write failed: " + path.string());
}

ClassifierModel ClassifierModel::load_checkpoint(
    const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw FormatError("not a model checkpoint: " + path.string());
  if (read_pod<std::uint32_t>(is) != kVersion)
    throw FormatError("unsupported checkpoint version");
  const auto layer_count = read_pod<std::uint32_t>(is);
  if (layer_count == 0) throw FormatError("checkpoint has no layers");

  ClassifierModel model;
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    const auto rows = read_pod<std::uint32_t>(is);
    const auto cols = read_pod<std::uint32_t>(is);
    const auto relu = read_pod<std::uint8_t>(is);
    if (rows == 0 || cols == 0) throw FormatError("degenerate layer dims");
    std::vector<double> w(static_cast<std::size_t>(rows) * cols);
    is.read(reinterpret_cast<char*>(w.data()),
            static_cast<std::streamsize>(w.size() * sizeof(double)));
    std::vector<double> b(cols);
    is.read(reinterpret_cast<char*>(b.data()),
            static_cast<std::streamsize>(b.size() * sizeof(double)));
    if (!is) throw FormatError("checkpoint truncated");
    MlpLayer layer;
    layer.weight = Tensor::param({rows, cols}, std::move(w));
    layer.bias = Tensor::param({cols}, std::move(b));
    layer.relu = relu != 0;
    model.layers_.push_back(std::move(layer));
  }
  return model;
}

}  // namespace cil
