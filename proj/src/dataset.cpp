// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#include "cil/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cil/rng.hpp"

namespace cil {

namespace {

constexpr char kMagic[8] = {'C', 'I', 'L', 'D', 'S', 'T', '0', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr double kSeparationRadius = 4.0;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("dataset file truncated");
  return v;
}

}  // namespace

void LabeledDataset::rebuild_index() {
  per_class.assign(num_classes, {});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw FormatError("label " + std::to_string(y) + " out of range [0, " +
                        std::to_string(num_classes) + ")");
    per_class[static_cast<std::size_t>(y)].push_back(i);
  }
}

void LabeledDataset::validate() const {
  if (samples.size() != labels.size() * dim)
    throw FormatError("sample buffer does not match n x dim");
  std::size_t covered = 0;
  for (const auto& lst : per_class) covered += lst.size();
  if (covered != labels.size())
    throw FormatError("per-class index lists do not partition the rows");
}

std::pair<Tensor, std::vector<int>> LabeledDataset::batch(
    const std::vector<std::size_t>& indices) const {
  std::vector<double> rows(indices.size() * dim);
  std::vector<int> ys(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    std::memcpy(&rows[k * dim], &samples[i * dim], dim * sizeof(double));
    ys[k] = labels[i];
  }
  return {Tensor::from({indices.size(), dim}, std::move(rows)), std::move(ys)};
}

namespace {

LabeledDataset load_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open dataset: " + path.string());
  LabeledDataset data;
  std::string line;
  std::size_t line_no = 0;
  int max_label = -1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> fields;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      const std::string tok = line.substr(pos, comma - pos);
      try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        fields.push_back(v);
      } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) +
                         ": bad field '" + tok + "'");
      }
      pos = comma + 1;
    }
    if (fields.size() < 2)
      throw ParseError("line " + std::to_string(line_no) +
                       ": need a label and at least one feature");
    const double label_field = fields[0];
    const int y = static_cast<int>(label_field);
    if (label_field != static_cast<double>(y) || y < 0)
      throw ParseError("line " + std::to_string(line_no) +
                       ": label must be a non-negative integer");
    if (data.dim == 0) {
      data.dim = fields.size() - 1;
    } else if (fields.size() - 1 != data.dim) {
      throw FormatError("line " + std::to_string(line_no) +
                        ": feature dimension " +
                        std::to_string(fields.size() - 1) +
                        " differs from " + std::to_string(data.dim));
    }
    data.labels.push_back(y);
    data.samples.insert(data.samples.end(), fields.begin() + 1, fields.end());
    max_label = std::max(max_label, y);
  }
  if (data.labels.empty())
    throw FormatError("dataset is empty: " + path.string());
  data.num_classes = static_cast<std::size_t>(max_label) + 1;
  data.rebuild_index();
  data.validate();
  return data;
}

void save_csv(const LabeledDataset& data, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot write dataset: " + path.string());
  os.precision(17);
  for (std::size_t i = 0; i < data.size(); ++i) {
    os << data.labels[i];
    for (std::size_t j = 0; j < data.dim; ++j)
      os << ',' << data.samples[i * data.dim + j];
    os << '\n';
  }
}

LabeledDataset load_binary(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open dataset: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw FormatError("not a binary dataset: " + path.string());
  if (read_pod<std::uint32_t>(is) != kVersion)
    throw FormatError("unsupported dataset version");
  const auto n = read_pod<std::uint64_t>(is);
  const auto d = read_pod<std::uint64_t>(is);
  const auto classes = read_pod<std::uint32_t>(is);
  if (n == 0 || d == 0 || classes == 0)
    throw FormatError("dataset is empty: " + path.string());

  LabeledDataset data;
  data.dim = static_cast<std::size_t>(d);
  data.num_classes = classes;
  data.labels.resize(static_cast<std::size_t>(n));
  std::vector<std::int32_t> raw(static_cast<std::size_t>(n));
  is.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size() * sizeof(std::int32_t)));
  for (std::size_t i = 0; i < raw.size(); ++i) data.labels[i] = raw[i];
  data.samples.resize(static_cast<std::size_t>(n * d));
  is.read(reinterpret_cast<char*>(data.samples.data()),
          static_cast<std::streamsize>(data.samples.size() * sizeof(double)));
  if (!is) throw FormatError("dataset file truncated");
  data.rebuild_index();
  data.validate();
  return data;
}

void save_binary(const LabeledDataset& data,
                 const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write dataset: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, kVersion);
  write_pod(os, static_cast<std::uint64_t>(data.size()));
  write_pod(os, static_cast<std::uint64_t>(data.dim));
  write_pod(os, static_cast<std::uint32_t>(data.num_classes));
  std::vector<std::int32_t> raw(data.labels.begin(), data.labels.end());
  os.write(reinterpret_cast<const char*>(raw.data()),
           static_cast<std::streamsize>(raw.size() * sizeof(std::int32_t)));
  os.write(reinterpret_cast<const char*>(data.samples.data()),
           static_cast<std::streamsize>(data.samples.size() * sizeof(double)));
  if (!os) throw FormatError("dataset write failed: " + path.string());
}

}  // namespace

LabeledDataset load_dataset(const std::filesystem::path& path,
                            DatasetFormat format) {
  return format == DatasetFormat::csv ? load_csv(path) : load_binary(path);
}

void save_dataset(const LabeledDataset& data,
                  const std::filesystem::path& path, DatasetFormat format) {
  if (format == DatasetFormat::csv)
    save_csv(data, path);
  else
    save_binary(data, path);
}

SyntheticTask synthesize_gaussian_task(std::size_t num_classes,
                                       std::size_t dim,
                                       std::size_t n_train_per_class,
                                       std::size_t n_test_per_class,
                                       double spread, std::uint64_t seed) {
  if (dim < 2) throw ArgumentError("synthetic task needs dim >= 2");
  if (num_classes == 0 || n_train_per_class == 0 || n_test_per_class == 0)
    throw ArgumentError("synthetic task counts must be positive");
  if (spread < 0.0) throw ArgumentError("spread must be >= 0");

  Rng mean_rng(mix_seed(seed, 0));
  std::vector<double> means(num_classes * dim);
  for (std::size_t c = 0; c < num_classes; ++c) {
    double norm = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double v = mean_rng.normal();
      means[c * dim + j] = v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) norm = 1.0;
    for (std::size_t j = 0; j < dim; ++j)
      means[c * dim + j] *= kSeparationRadius / norm;
  }

  auto draw = [&](std::size_t per_class, std::uint64_t stream) {
    LabeledDataset data;
    data.dim = dim;
    data.num_classes = num_classes;
    Rng rng(mix_seed(seed, stream));
    for (std::size_t c = 0; c < num_classes; ++c)
      for (std::size_t k = 0; k < per_class; ++k) {
        data.labels.push_back(static_cast<int>(c));
        for (std::size_t j = 0; j < dim; ++j)
          data.samples.push_back(means[c * dim + j] + spread * rng.normal());
      }
    data.rebuild_index();
    return data;
  };

  SyntheticTask task;
  task.train = draw(n_train_per_class, 1);
  task.test = draw(n_test_per_class, 2);
  return task;
}

}  // namespace cil
