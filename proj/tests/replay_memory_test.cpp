// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include <doctest.h>

#include "cil/replay_memory.hpp"
#include "test_util.hpp"

using namespace cil;
using testutil::random_tensor;

namespace {

// Brute-force greedy reference: explicit loops, no shared code with the
// library path.
std::vector<std::size_t> greedy_oracle(const std::vector<std::vector<double>>& f,
                                       std::size_t m) {
  const std::size_t n = f.size(), d = f[0].size();
  std::vector<double> mean(d, 0.0);
  for (const auto& row : f)
    for (std::size_t j = 0; j < d; ++j) mean[j] += row[j] / double(n);
  std::vector<std::size_t> picked;
  std::set<std::size_t> used;
  for (std::size_t s = 1; s <= m; ++s) {
    double best_dist = 1e300;
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (used.count(i)) continue;
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        double acc = f[i][j];
        for (std::size_t p : picked) acc += f[p][j];
        const double diff = mean[j] - acc / double(s);
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = i;
      }
    }
    picked.push_back(best);
    used.insert(best);
  }
  return picked;
}

double prefix_objective(const std::vector<std::vector<double>>& f,
                        const std::vector<std::size_t>& sel,
                        std::size_t prefix) {
  const std::size_t d = f[0].size();
  std::vector<double> mean(d, 0.0), acc(d, 0.0);
  for (const auto& row : f)
    for (std::size_t j = 0; j < d; ++j) mean[j] += row[j] / double(f.size());
  for (std::size_t s = 0; s < prefix; ++s)
    for (std::size_t j = 0; j < d; ++j) acc[j] += f[sel[s]][j];
  double dist = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = mean[j] - acc[j] / double(prefix);
    dist += diff * diff;
  }
  return std::sqrt(dist);
}

Tensor to_tensor(const std::vector<std::vector<double>>& f) {
  std::vector<double> flat;
  for (const auto& row : f) flat.insert(flat.end(), row.begin(), row.end());
  return Tensor::from({f.size(), f[0].size()}, flat);
}

LabeledDataset tiny_dataset(std::size_t classes, std::size_t per_class,
                            std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  LabeledDataset data;
  data.dim = dim;
  data.num_classes = classes;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t k = 0; k < per_class; ++k) {
      data.labels.push_back(static_cast<int>(c));
      for (std::size_t j = 0; j < dim; ++j)
        data.samples.push_back(rng.uniform(-1, 1) + double(c));
    }
  data.rebuild_index();
  return data;
}

Tensor identity_features(const Tensor& x) { return x; }

}  // namespace

TEST_CASE("herding on the three-point example") {
  Tensor f = to_tensor({{1, 0}, {0, 1}, {1, 1}});
  // (1,1) sits nearest the mean (2/3, 2/3)
  CHECK(herding_select(f, 1) == std::vector<std::size_t>{2});
  // the second step ties between 0 and 1; the smaller index wins
  CHECK(herding_select(f, 2) == std::vector<std::size_t>{2, 0});
}

TEST_CASE("herding exhausts to a permutation when m equals n") {
  Rng rng(3);
  Tensor f = random_tensor({6, 3}, rng);
  auto sel = herding_select(f, 6);
  std::vector<std::size_t> sorted = sel;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("herding argument validation") {
  Rng rng(4);
  Tensor f = random_tensor({3, 2}, rng);
  CHECK_THROWS_AS(herding_select(f, 4), ArgumentError);
  CHECK_THROWS_AS(herding_select(f, 0), ArgumentError);
  Tensor bad = Tensor::from({1, 2}, {1.0, std::nan("")});
  CHECK_THROWS_AS(herding_select(bad, 1), NumericError);
}

TEST_CASE("herding matches the brute-force greedy oracle") {
  Rng rng(2025);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(7);  // up to 8
    const std::size_t m = 1 + rng.below(std::min<std::size_t>(3, n));
    const std::size_t d = 2 + rng.below(3);
    std::vector<std::vector<double>> f(n, std::vector<double>(d));
    for (auto& row : f)
      for (double& v : row) v = rng.uniform(-2, 2);
    const auto got = herding_select(to_tensor(f), m);
    const auto want = greedy_oracle(f, m);
    REQUIRE(got.size() == want.size());
    for (std::size_t prefix = 1; prefix <= m; ++prefix)
      CHECK(prefix_objective(f, got, prefix) ==
            doctest::Approx(prefix_objective(f, want, prefix))
                .epsilon(1e-12));
  }
}

TEST_CASE("herding first pick is the point closest to the mean") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(11);  // up to 12
    const std::size_t d = 2 + rng.below(4);
    std::vector<std::vector<double>> f(n, std::vector<double>(d));
    std::vector<double> mean(d, 0.0);
    for (auto& row : f)
      for (std::size_t j = 0; j < d; ++j) {
        row[j] = rng.uniform(-3, 3);
        mean[j] += row[j] / double(n);
      }
    std::size_t best = 0;
    double best_dist = 1e300;
    for (std::size_t i = 0; i < n; ++i) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j)
        dist += (mean[j] - f[i][j]) * (mean[j] - f[i][j]);
      if (dist < best_dist) {
        best_dist = dist;
        best = i;
      }
    }
    CHECK(herding_select(to_tensor(f), 1)[0] == best);
  }
}

TEST_CASE("herding selections are prefix-consistent") {
  Rng rng(78);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 3 + rng.below(10);  // up to 12
    Tensor f = random_tensor({n, 3}, rng);
    const auto full = herding_select(f, n);
    for (std::size_t m = 1; m < n; ++m) {
      const auto part = herding_select(f, m);
      for (std::size_t i = 0; i < m; ++i) CHECK(part[i] == full[i]);
    }
  }
}

TEST_CASE("random_select basics") {
  CHECK(random_select(5, 5, 1).size() == 5);
  auto all = random_select(5, 5, 1);
  std::sort(all.begin(), all.end());
  CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4});

  CHECK(random_select(100, 10, 42) == random_select(100, 10, 42));

  auto sel = random_select(50, 20, 7);
  std::set<std::size_t> uniq(sel.begin(), sel.end());
  CHECK(uniq.size() == 20);
  for (std::size_t v : sel) CHECK(v < 50);

  CHECK_THROWS_AS(random_select(3, 4, 1), ArgumentError);
}

TEST_CASE("growing memory stores capped per-class lists") {
  LabeledDataset data = tiny_dataset(10, 30, 2, 5);
  ReplayMemory mem = ReplayMemory::growing(20);
  std::vector<int> classes;
  for (int c = 0; c < 10; ++c) classes.push_back(c);
  mem.update(data, classes, identity_features);
  CHECK(mem.total_stored() == 200);
  CHECK(mem.num_stored_classes() == 10);
  for (int c = 0; c < 10; ++c) CHECK(mem.exemplars(c).size() == 20);

  CHECK_THROWS_AS(mem.update(data, {3}, identity_features), ArgumentError);
}

TEST_CASE("fixed memory divides the budget") {
  LabeledDataset data = tiny_dataset(8, 40, 2, 6);
  ReplayMemory mem = ReplayMemory::fixed(20000);
  // emulate the large-scale setting arithmetic
  CHECK(ReplayMemory::fixed(20000).quota(1000) == 20);

  std::vector<int> first{0, 1, 2, 3, 4};
  mem = ReplayMemory::fixed(20);
  mem.update(data, first, identity_features);
  CHECK(mem.quota() == 4);
  for (int c : first) CHECK(mem.exemplars(c).size() == 4);

  // five more classes shrink the quota to 2 and truncate prefixes
  std::vector<std::vector<std::size_t>> before;
  for (int c : first) before.push_back(mem.exemplars(c));
  std::vector<int> second{5, 6, 7};
  mem.update(data, second, identity_features);
  CHECK(mem.quota() == 2);
  CHECK(mem.total_stored() <= 20);
  for (std::size_t i = 0; i < first.size(); ++i) {
    const auto& now = mem.exemplars(first[i]);
    REQUIRE(now.size() == 2);
    CHECK(now[0] == before[i][0]);
    CHECK(now[1] == before[i][1]);
  }
}

TEST_CASE("fixed memory never exceeds its budget") {
  Rng rng(9);
  LabeledDataset data = tiny_dataset(12, 25, 2, 7);
  ReplayMemory mem = ReplayMemory::fixed(17, SelectionMethod::random, 3);
  std::vector<int> order(12);
  for (int c = 0; c < 12; ++c) order[c] = c;
  for (int c : order) {
    mem.update(data, {c}, identity_features);
    CHECK(mem.total_stored() <= 17);
  }
}

TEST_CASE("growing memory total tracks the class count") {
  LabeledDataset data = tiny_dataset(6, 9, 2, 8);
  ReplayMemory mem = ReplayMemory::growing(5, SelectionMethod::random, 7);
  for (int c = 0; c < 6; ++c) {
    mem.update(data, {c}, identity_features);
    CHECK(mem.total_stored() == 5 * std::size_t(c + 1));
  }
}

TEST_CASE("training_set merges step data and memory") {
  // 3 old classes with 20 exemplars each, 2 new classes with 500 samples
  LabeledDataset source = tiny_dataset(5, 500, 2, 11);
  ReplayMemory mem = ReplayMemory::growing(20, SelectionMethod::random, 1);
  mem.update(source, {0, 1, 2}, identity_features);

  LabeledDataset step;
  step.dim = 2;
  step.num_classes = 5;
  for (int c = 3; c < 5; ++c)
    for (int k = 0; k < 500; ++k) {
      step.labels.push_back(c);
      step.samples.push_back(0.1 * k);
      step.samples.push_back(double(c));
    }
  step.rebuild_index();

  MergedTrainingSet merged = training_set(step, mem, source, 5);
  CHECK(merged.counts == std::vector<std::int64_t>{20, 20, 20, 500, 500});
  CHECK(merged.old_set == std::vector<std::uint8_t>{1, 1, 1, 0, 0});
  CHECK(merged.old_rows.size() == 60);
  CHECK(merged.new_rows.size() == 1000);
  CHECK(merged.data.size() == 1060);

  // class overlap is rejected
  ReplayMemory clash = ReplayMemory::growing(2, SelectionMethod::random, 1);
  clash.update(source, {3}, identity_features);
  CHECK_THROWS_AS(training_set(step, clash, source, 5), ArgumentError);
}

TEST_CASE("empty memory leaves old counts at zero") {
  LabeledDataset source = tiny_dataset(4, 10, 2, 12);
  ReplayMemory mem = ReplayMemory::growing(0);
  mem.update(source, {0, 1}, identity_features);
  LabeledDataset step;
  step.dim = 2;
  step.num_classes = 4;
  for (int c = 2; c < 4; ++c)
    for (int k = 0; k < 10; ++k) {
      step.labels.push_back(c);
      step.samples.push_back(double(k));
      step.samples.push_back(double(c));
    }
  step.rebuild_index();
  MergedTrainingSet merged = training_set(step, mem, source, 4);
  CHECK(merged.counts == std::vector<std::int64_t>{0, 0, 10, 10});
  CHECK(merged.old_set == std::vector<std::uint8_t>{1, 1, 0, 0});
}

TEST_CASE("base step with empty memory keeps raw class sizes") {
  LabeledDataset base = tiny_dataset(3, 7, 2, 13);
  ReplayMemory mem = ReplayMemory::growing(20);
  MergedTrainingSet merged = training_set(base, mem, base, 3);
  CHECK(merged.counts == std::vector<std::int64_t>{7, 7, 7});
  CHECK(merged.old_rows.empty());
}

TEST_CASE("memory state round-trips through the text format") {
  LabeledDataset source = tiny_dataset(4, 12, 2, 14);
  ReplayMemory mem = ReplayMemory::growing(3, SelectionMethod::herding, 0);
  mem.update(source, {0, 1, 2, 3}, identity_features);
  const auto path =
      std::filesystem::temp_directory_path() / "cil_memory_state.txt";
  mem.save(path);
  ReplayMemory loaded = ReplayMemory::load(path, MemoryPolicy::growing, 3,
                                           SelectionMethod::herding, 0);
  CHECK(loaded.store() == mem.store());
  std::filesystem::remove(path);
}
