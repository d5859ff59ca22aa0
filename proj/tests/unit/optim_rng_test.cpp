#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "dass/error.hpp"
#include "dass/ops.hpp"
#include "dass/optim.hpp"
#include "dass/rng.hpp"

using namespace dass;

TEST(Sgd, OneStepMatchesUpdateRule) {
  // v = 0.9 * 0 + g + wd * p = 0.5 + 0.01 * 2 = 0.52; p = 2 - 0.1 * 0.52.
  Variable p(Tensor(Shape{1}, 2.0f), true);
  p.accumulate_grad(Tensor(Shape{1}, 0.5f));
  OptimState st{0.1f, 0.9f, 0.01f, {}};
  sgd_step(p, st);
  EXPECT_FLOAT_EQ(p.value()[0], 2.0f - 0.1f * 0.52f);
  EXPECT_FALSE(p.has_grad());
  // second step: v = 0.9 * 0.52 + 0.5 + 0.01 * p
  const float p1 = p.value()[0];
  p.accumulate_grad(Tensor(Shape{1}, 0.5f));
  sgd_step(p, st);
  EXPECT_FLOAT_EQ(p.value()[0], p1 - 0.1f * (0.9f * 0.52f + 0.5f + 0.01f * p1));
}

TEST(Sgd, MissingGradientIsAConfigError) {
  Variable p(Tensor(Shape{1}, 2.0f), true);
  OptimState st;
  EXPECT_THROW(sgd_step(p, st), ConfigError);
}

TEST(Sgd, QuadraticConvergesToMinimum) {
  // L = (theta - 2)^2, lr 0.05, no momentum: error shrinks by 0.9 per step.
  Variable theta(Tensor(Shape{1}, 0.0f), true);
  SgdOptimizer opt({theta}, 0.05f, 0.0f, 0.0f);
  for (int i = 0; i < 200; ++i) {
    Tape tape;
    Variable loss;
    {
      TapeScope scope(tape);
      const Variable d = ops::add(theta, Variable(Tensor(Shape{1}, -2.0f)));
      loss = ops::sum(ops::mul(d, d));
    }
    tape.backward(loss);
    opt.step();
  }
  EXPECT_NEAR(theta.value()[0], 2.0f, 1e-3f);
}

TEST(CosineLr, Endpoints) {
  EXPECT_FLOAT_EQ(cosine_lr(0, 100, 0.025f), 0.025f);
  EXPECT_NEAR(cosine_lr(50, 100, 0.025f), 0.0125f, 1e-7f);
  EXPECT_NEAR(cosine_lr(99, 100, 1.0f), (1.0 + std::cos(M_PI * 0.99)) / 2.0, 1e-6);
  EXPECT_THROW(cosine_lr(101, 100, 1.0f), ConfigError);
}

TEST(Rng, DeterministicAndRestorable) {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(a.seed(), a.counter());
  EXPECT_EQ(a.next_u64(), c.next_u64());
  EXPECT_NE(Rng(1).next_u64(), Rng(2).next_u64());
}

TEST(Rng, ForkIsIndependentOfParentPosition) {
  Rng a(7);
  const auto f1 = a.fork(3).next_u64();
  a.next_u64();
  EXPECT_EQ(a.fork(3).next_u64(), f1);
  EXPECT_NE(a.fork(4).next_u64(), f1);
}

TEST(Rng, DistributionsInRange) {
  Rng r(9);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double z = r.normal();
    sum += z;
    sq += z * z;
    ASSERT_LT(r.below(7), 7u);
  }
  EXPECT_NEAR(sum / n, 0.0, 0.05);
  EXPECT_NEAR(sq / n, 1.0, 0.05);
}

TEST(Rng, PermutationIsAPermutation) {
  Rng r(5);
  const auto p = r.permutation(100);
  EXPECT_EQ(std::set<int64_t>(p.begin(), p.end()).size(), 100u);
}
