// Copyright 2026 the cil authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include <doctest.h>

#include "cil/losses.hpp"
#include "cil/tape.hpp"
#include "test_util.hpp"

using namespace cil;
using testutil::random_tensor;

TEST_CASE("matmul identity and forced values") {
  Tape tape;
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor v = Tensor::from({2, 1}, {2, 3});
  Tensor out = tape.matmul(eye, v);
  CHECK(out.values() == std::vector<double>{2, 3});

  Tensor a = Tensor::from({1, 2}, {1, 2});
  Tensor b = Tensor::from({2, 1}, {3, 4});
  CHECK(tape.matmul(a, b)[0] == 11);
}

TEST_CASE("matmul shape errors") {
  Tape tape;
  Tensor a = Tensor::from({2, 3}, std::vector<double>(6, 1.0));
  Tensor b = Tensor::from({2, 2}, std::vector<double>(4, 1.0));
  CHECK_THROWS_AS(tape.matmul(a, b), ShapeError);
  Tensor v = Tensor::from({3}, {1, 2, 3});
  CHECK_THROWS_AS(tape.matmul(a, v), ShapeError);
}

TEST_CASE("matmul backward matches finite differences") {
  Rng rng(41);
  Tensor b = random_tensor({4, 2}, rng);
  Tensor x0 = random_tensor({3, 4}, rng);
  auto f = [&](Tape& t, const Tensor& x) { return t.sum(t.matmul(x, b)); };
  CHECK(grad_check(f, x0, 1e-5) < 1e-6);

  Tensor a = random_tensor({3, 4}, rng);
  auto g = [&](Tape& t, const Tensor& x) { return t.sum(t.matmul(a, x)); };
  CHECK(grad_check(g, random_tensor({4, 2}, rng), 1e-5) < 1e-6);
}

TEST_CASE("elementwise forward rules") {
  Tape tape;
  Tensor x = Tensor::from({2}, {-1, 2});
  CHECK(tape.relu(x).values() == std::vector<double>{0, 2});

  Tensor h = Tensor::from({1}, {0.5});
  CHECK(tape.log(tape.exp(h))[0] == doctest::Approx(0.5).epsilon(1e-12));

  CHECK_THROWS_AS(tape.log(Tensor::from({1}, {-1.0})), DomainError);
  CHECK_THROWS_AS(
      tape.add(Tensor::from({2}, {1, 2}), Tensor::from({3}, {1, 2, 3})),
      ShapeError);
}

TEST_CASE("mul backward applies the product rule") {
  Tape tape;
  Tensor a = Tensor::param({1}, {2});
  Tensor b = Tensor::param({1}, {3});
  Tensor out = tape.mul(a, b);
  tape.backward(out);
  CHECK(a.grad()[0] == 3);
  CHECK(b.grad()[0] == 2);
}

TEST_CASE("scalar broadcast accumulates into the scalar side") {
  Tape tape;
  Tensor s = Tensor::param({1}, {2.0});
  Tensor v = Tensor::param({3}, {1, 2, 3});
  Tensor out = tape.sum(tape.mul(v, s));
  tape.backward(out);
  CHECK(s.grad()[0] == 6);
  CHECK(v.grad() == std::vector<double>{2, 2, 2});
}

TEST_CASE("reductions") {
  Tape tape;
  CHECK(tape.logsumexp(Tensor::from({2}, {0, 0}))[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // max-shift keeps huge inputs finite
  Tensor big = Tensor::from({2}, {1000, 1000});
  CHECK(tape.logsumexp(big)[0] ==
        doctest::Approx(1000 + std::log(2.0)).epsilon(1e-12));
  Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(tape.sum(m, 1).values() == std::vector<double>{3, 7});
  CHECK(tape.sum(m, 0).values() == std::vector<double>{4, 6});
  CHECK(tape.mean(m)[0] == 2.5);
  CHECK(tape.mean(m, 1).values() == std::vector<double>{1.5, 3.5});
  CHECK(tape.mean(m, 0).values() == std::vector<double>{2, 3});
  CHECK_THROWS_AS(tape.sum(m, 2), ShapeError);
}

TEST_CASE("logsumexp equals the naive form on moderate inputs") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({6}, rng, -20.0, 20.0);
    double naive = 0.0;
    for (double v : x.values()) naive += std::exp(v);
    naive = std::log(naive);
    Tape tape;
    CHECK(tape.logsumexp(x)[0] == doctest::Approx(naive).epsilon(1e-10));
  }
  Tape tape;
  Tensor extreme = Tensor::from({3}, {1e4, -1e4, 0.0});
  CHECK(std::isfinite(tape.logsumexp(extreme)[0]));
}

TEST_CASE("backward basics") {
  {
    Tape tape;
    Tensor x = Tensor::param({1}, {3});
    Tensor y = tape.mul(x, x);
    tape.backward(y);
    CHECK(x.grad()[0] == 6);
    // repeated calls accumulate
    tape.backward(y);
    CHECK(x.grad()[0] == 12);
  }
  {
    Tape tape;
    Tensor x = Tensor::param({2}, {-1, 1});
    Tensor y = tape.sum(tape.relu(x));
    tape.backward(y);
    CHECK(x.grad() == std::vector<double>{0, 1});
  }
  {
    Tape tape;
    Tensor s = Tensor::param({1}, {1});
    CHECK_THROWS_AS(tape.backward(s), ArgumentError);  // empty tape
    Tensor x = Tensor::param({2}, {1, 2});
    Tensor y = tape.add(x, x);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);  // non-scalar
  }
}

TEST_CASE("backward touches each recorded op exactly once") {
  Tape tape;
  Tensor x = Tensor::param({4}, {1, 2, 3, 4});
  Tensor y = tape.mean(tape.exp(tape.relu(tape.scale(x, 0.5))));
  const std::size_t ops = tape.num_ops();
  CHECK(ops >= 4);
  tape.backward(y);
  CHECK(tape.backward_visits() == ops);
}

TEST_CASE("structural op gradients match finite differences") {
  Rng rng(11);
  auto run = [&](auto&& f, std::vector<std::size_t> shape) {
    return grad_check(f, random_tensor(std::move(shape), rng), 1e-5);
  };
  CHECK(run([](Tape& t, const Tensor& x) { return t.sum(t.tile_rows(x, 3)); },
            {4}) < 1e-6);
  CHECK(run([](Tape& t, const Tensor& x) { return t.sum(t.tile_cols(x, 5)); },
            {3}) < 1e-6);
  CHECK(run([](Tape& t, const Tensor& x) {
          return t.sum(t.gather_cols(x, {2, 0}));
        },
            {3, 4}) < 1e-6);
  std::vector<int> labels{1, 0, 2};
  CHECK(run([&](Tape& t, const Tensor& x) {
          return t.sum(t.take_per_row(x, labels));
        },
            {3, 3}) < 1e-6);
  CHECK(run([](Tape& t, const Tensor& x) { return t.logsumexp(x); }, {5}) <
        1e-6);
  CHECK(run([](Tape& t, const Tensor& x) { return t.sum(t.sum(x, 0)); },
            {3, 4}) < 1e-6);
  CHECK(run([](Tape& t, const Tensor& x) { return t.sum(t.mean(x, 1)); },
            {3, 4}) < 1e-6);
  CHECK(run([](Tape& t, const Tensor& x) {
          return t.sum(t.logsumexp(x, 1));
        },
            {3, 4}) < 1e-6);
  CHECK(run([](Tape& t, const Tensor& x) {
          return t.sum(t.logsumexp(x, 0));
        },
            {3, 4}) < 1e-6);
}

TEST_CASE("composite mlp gradient matches finite differences") {
  Rng rng(17);
  Tensor w1 = random_tensor({5, 4}, rng);
  Tensor b1 = random_tensor({4}, rng);
  Tensor w2 = random_tensor({4, 3}, rng);
  std::vector<int> labels{0, 2};
  auto f = [&](Tape& t, const Tensor& x) {
    Tensor h = t.relu(t.add(t.matmul(x, w1), t.tile_rows(b1, 2)));
    Tensor logits = t.matmul(h, w2);
    return standard_softmax_ce(t, logits, labels);
  };
  CHECK(grad_check(f, random_tensor({2, 5}, rng), 1e-5) < 1e-5);
}

TEST_CASE("grad_check utility") {
  auto square = [](Tape& t, const Tensor& x) { return t.mul(x, x); };
  CHECK(grad_check(square, Tensor::from({1}, {2.0}), 1e-5) < 1e-8);
  CHECK_THROWS_AS(grad_check(square, Tensor::from({1}, {2.0}), 0.0),
                  ArgumentError);

  // softmax CE over random logits is its own oracle here
  Rng rng(3);
  std::vector<int> labels{1, 0};
  auto ce = [&](Tape& t, const Tensor& x) {
    return standard_softmax_ce(t, x, labels);
  };
  CHECK(grad_check(ce, random_tensor({2, 4}, rng), 1e-5) < 1e-6);
}

TEST_CASE("grad_check flags a corrupted backward rule") {
  // y = x^2 forward with a deliberately wrong 3x backward
  auto broken = [](Tape& t, const Tensor& x) {
    Tensor out = Tensor::from({1}, {x[0] * x[0]});
    out.set_requires_grad(true);
    auto xs = x.storage();
    auto os = out.storage();
    t.record(os, [xs, os] {
      Tape::ensure_grad(*xs);
      xs->grad[0] += os->grad[0] * 3.0 * xs->values[0];
    });
    return out;
  };
  CHECK(grad_check(broken, Tensor::from({1}, {2.0}), 1e-5) > 1e-3);
}

TEST_CASE("every op passes grad_check on seeded random inputs") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor m = random_tensor({3, 4}, rng);
    Tensor v = random_tensor({4}, rng);
    Tensor pos = random_tensor({3, 4}, rng, 0.2, 2.0);
    std::vector<int> labels = testutil::random_labels(3, 4, rng);

    auto check = [&](auto&& f, const Tensor& x) {
      CHECK(grad_check(f, x, 1e-5) < 1e-5);
    };
    // fixed right operand: grad_check re-evaluates f many times
    Tensor b = random_tensor({4, 2}, rng);
    check([&](Tape& t, const Tensor& x) { return t.sum(t.matmul(x, b)); }, m);
    check([&](Tape& t, const Tensor& x) { return t.sum(t.add(x, m)); }, m);
    check([&](Tape& t, const Tensor& x) { return t.sum(t.sub(m, x)); }, m);
    check([&](Tape& t, const Tensor& x) { return t.sum(t.mul(x, m)); }, m);
    check([&](Tape& t, const Tensor& x) { return t.sum(t.scale(x, -1.7)); }, m);
    // keep relu probes away from the kink so central differences are valid
    Tensor away = random_tensor({3, 4}, rng, 0.1, 1.0);
    for (auto& vv : away.values())
      if (rng.uniform() < 0.5) vv = -vv;
    check([&](Tape& t, const Tensor& x) { return t.sum(t.relu(x)); }, away);
    check([&](Tape& t, const Tensor& x) { return t.sum(t.exp(x)); }, m);
    check([&](Tape& t, const Tensor& x) { return t.sum(t.log(x)); }, pos);
    check([&](Tape& t, const Tensor& x) { return t.sum(t.negate(x)); }, m);
    check([&](Tape& t, const Tensor& x) { return t.mean(x); }, m);
    check([&](Tape& t, const Tensor& x) { return t.sum(t.logsumexp(x, 1)); }, m);
    check([&](Tape& t, const Tensor& x) {
      return t.sum(t.take_per_row(x, labels));
    }, m);
    check([&](Tape& t, const Tensor& x) { return t.sum(t.tile_rows(x, 2)); }, v);
  }
}

TEST_CASE("forward passes are deterministic bit for bit") {
  Rng rng(5);
  Tensor w = random_tensor({6, 4}, rng);
  Tensor x = random_tensor({3, 6}, rng);
  auto run = [&] {
    Tape tape;
    return tape.logsumexp(tape.relu(tape.matmul(x, w)), 1).values();
  };
  CHECK(testutil::bit_equal(run(), run()));
}
