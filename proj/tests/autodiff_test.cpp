#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "gcpo/autodiff.hpp"
#include "gcpo/rng.hpp"

using namespace gcpo;

namespace {

// Builds an expression over k leaves, then compares tape gradients against
// central finite differences of the re-evaluated tape.
void check_gradients(int k, const std::function<Tape::Var(Tape&, const std::vector<Tape::Var>&)>& build,
                     const std::vector<double>& at, double tol = 1e-7) {
  Tape tape;
  std::vector<Tape::Var> leaves;
  for (int i = 0; i < k; ++i) leaves.push_back(tape.leaf());
  Tape::Var root = build(tape, leaves);
  for (int i = 0; i < k; ++i) tape.set_leaf(leaves[i], at[i]);
  tape.forward();
  tape.backward(root);
  std::vector<double> grad(k);
  for (int i = 0; i < k; ++i) grad[i] = tape.gradient(leaves[i]);

  const double h = 1e-6;
  for (int i = 0; i < k; ++i) {
    tape.set_leaf(leaves[i], at[i] + h);
    tape.forward();
    double up = tape.value(root);
    tape.set_leaf(leaves[i], at[i] - h);
    tape.forward();
    double dn = tape.value(root);
    tape.set_leaf(leaves[i], at[i]);
    double fd = (up - dn) / (2 * h);
    REQUIRE(std::abs(grad[i] - fd) <= tol * std::max(1.0, std::abs(fd)));
  }
}

}  // namespace

TEST_CASE("basic arithmetic gradients match finite differences") {
  check_gradients(2,
                  [](Tape& t, const std::vector<Tape::Var>& v) {
                    auto s = t.add(t.mul(v[0], v[1]), t.div(v[0], v[1]));
                    return t.sub(s, t.mul_const(v[1], 3.0));
                  },
                  {1.3, -2.1});
}

TEST_CASE("exp log chain matches finite differences") {
  check_gradients(2,
                  [](Tape& t, const std::vector<Tape::Var>& v) {
                    auto r = t.exp(t.sub(v[0], v[1]));
                    auto kl = t.sub(r, t.add_const(t.sub(v[0], v[1]), 1.0));
                    return t.add(kl, t.log(t.add_const(t.mul(v[0], v[0]), 1.0)));
                  },
                  {0.4, 0.9});
}

TEST_CASE("expm1 matches exp minus one and stays nonnegative in expm1(d)-d form") {
  check_gradients(1,
                  [](Tape& t, const std::vector<Tape::Var>& v) {
                    return t.sub(t.expm1(v[0]), v[0]);
                  },
                  {0.37});
  // expm1(d) - d >= 0 for every representable d, including tiny d where
  // exp(d)-1-d would cancel to a signed zero or negative.
  for (double d : {1e-9, -1e-9, 3e-16, -3e-16, 0.0, 0.2, -0.4}) {
    Tape t;
    auto x = t.leaf();
    auto r = t.sub(t.expm1(x), x);
    t.set_leaf(x, d);
    t.forward();
    REQUIRE(t.value(r) >= 0.0);
  }
}

TEST_CASE("min max clamp gradients away from kinks") {
  check_gradients(2,
                  [](Tape& t, const std::vector<Tape::Var>& v) {
                    auto m = t.min(v[0], t.mul_const(v[1], 2.0));
                    auto M = t.max(v[0], v[1]);
                    return t.add(m, t.add(M, t.clamp(v[0], -0.5, 0.5)));
                  },
                  {0.2, 0.7});
  check_gradients(1,
                  [](Tape& t, const std::vector<Tape::Var>& v) {
                    return t.clamp(v[0], -0.5, 0.5);
                  },
                  {0.9});
}

TEST_CASE("clamp saturates value and zeroes gradient outside bounds") {
  Tape t;
  auto x = t.leaf(2.0);
  auto c = t.clamp(x, 0.0, 1.0);
  t.forward();
  REQUIRE(t.value(c) == 1.0);
  t.backward(c);
  REQUIRE(t.gradient(x) == 0.0);
  t.set_leaf(x, 0.25);
  t.forward();
  t.backward(c);
  REQUIRE(t.value(c) == 0.25);
  REQUIRE(t.gradient(x) == 1.0);
}

TEST_CASE("fan-out accumulates gradient") {
  Tape t;
  auto x = t.leaf(3.0);
  auto y = t.add(t.mul(x, x), x);
  t.forward();
  t.backward(y);
  REQUIRE(t.gradient(x) == Catch::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("random deep expressions match finite differences") {
  Rng rng(derive_seed(123, Stream::test));
  for (int trial = 0; trial < 20; ++trial) {
    int k = 3;
    std::vector<double> at(k);
    for (auto& a : at) a = 0.5 + rng.uniform();
    auto build = [&](Tape& t, const std::vector<Tape::Var>& v) {
      std::vector<Tape::Var> pool(v);
      Rng local(derive_seed(900 + trial, Stream::test));
      for (int step = 0; step < 30; ++step) {
        auto pick = [&] { return pool[local.categorical(
            std::vector<double>(pool.size(), 1.0 / pool.size()))]; };
        switch (local.categorical(std::vector<double>{0.25, 0.2, 0.2, 0.2, 0.15})) {
          case 0: pool.push_back(t.add(pick(), pick())); break;
          case 1: pool.push_back(t.mul(pick(), pick())); break;
          case 2: pool.push_back(t.exp(t.mul_const(pick(), 0.05))); break;
          case 3: pool.push_back(t.log(t.add_const(t.mul(pick(), pick()), 40.0))); break;
          default: pool.push_back(t.min(pick(), t.add_const(pick(), 0.3))); break;
        }
      }
      auto root = pool[0];
      for (auto p : pool) root = t.add(root, p);
      return t.mul_const(root, 1e-3);
    };
    check_gradients(k, build, at, 1e-5);
  }
}
