#include "flamkit/numcore.h"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "flamkit/rng.h"

namespace flamkit {
namespace {

TEST(LogSigmoid, ReferenceValues) {
  EXPECT_DOUBLE_EQ(log_sigmoid(0.0), -0.6931471805599453);
  EXPECT_NEAR(log_sigmoid(-100.0), -100.0, 1e-12);
  // -log(1 + e^-10), 40-digit reference.
  EXPECT_NEAR(log_sigmoid(10.0), -4.5398899216864646769e-5, 1e-18);
  EXPECT_NEAR(log_sigmoid(-30.0), -30.000000000000093576, 1e-12);
}

TEST(LogSigmoid, FiniteAtExtremes) {
  EXPECT_LE(log_sigmoid(700.0), 0.0);
  EXPECT_GT(log_sigmoid(700.0), -1e-300);
  EXPECT_NEAR(log_sigmoid(-700.0), -700.0, 1e-12);
  EXPECT_TRUE(std::isfinite(log_sigmoid(-700.0)));
}

TEST(LogSigmoid, RejectsNonFinite) {
  EXPECT_THROW(log_sigmoid(std::numeric_limits<double>::quiet_NaN()), InvalidArgument);
  EXPECT_THROW(log_sigmoid(std::numeric_limits<double>::infinity()), InvalidArgument);
}

TEST(LogSigmoid, MonotoneAndNonPositive) {
  double prev = log_sigmoid(-700.0);
  for (double x = -699.5; x <= 700.0; x += 0.5) {
    const double v = log_sigmoid(x);
    EXPECT_LE(v, 0.0);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(Sigmoid, ComplementIdentity) {
  for (double x = -700.0; x <= 700.0; x += 0.25) {
    EXPECT_NEAR(sigmoid(x) + sigmoid(-x), 1.0, 1e-12) << x;
  }
}

TEST(L2Normalize, Examples) {
  const auto y = l2_normalize(std::vector<double>{3.0, 4.0});
  EXPECT_NEAR(y[0], 0.6, 1e-15);
  EXPECT_NEAR(y[1], 0.8, 1e-15);
  const auto z = l2_normalize(y);
  EXPECT_NEAR(z[0], y[0], 1e-12);
  EXPECT_NEAR(z[1], y[1], 1e-12);
  EXPECT_THROW(l2_normalize(std::vector<double>{0.0, 0.0}), DegenerateVector);
}

TEST(L2Normalize, ScaleInvariantAndUnitNorm) {
  Rng rng(3, streams::kTest);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> v(7);
    for (double& x : v) x = rng.normal();
    const double c = std::exp(rng.uniform(-20.0, 20.0));
    std::vector<double> cv(v);
    for (double& x : cv) x *= c;
    const auto a = l2_normalize(v);
    const auto b = l2_normalize(cv);
    EXPECT_NEAR(norm2(a), 1.0, 1e-9);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
  }
}

TEST(L2Normalize, BackwardMatchesFiniteDifferences) {
  Rng rng(5, streams::kTest);
  std::vector<double> v(6), w(6);
  for (double& x : v) x = rng.normal();
  for (double& x : w) x = rng.normal();
  auto f = [&](std::span<const double> x) { return dot(l2_normalize(x), w); };
  const auto y = l2_normalize(v);
  const auto analytic = l2_normalize_backward(y, norm2(v), w);
  const auto numeric = finite_diff_grad(f, v);
  EXPECT_LT(max_relative_error(analytic, numeric), 1e-6);
}

TEST(OptStep, FirstAdamStepIsLearningRate) {
  std::vector<double> p{0.5};
  std::vector<double> g{1.0};
  OptState s;
  opt_step(p, g, s);
  // m_hat = v_hat = 1 so the step is lr / (1 + eps).
  EXPECT_NEAR(p[0] - 0.5, -1e-3, 1e-10);
  EXPECT_EQ(s.step, 1u);
}

TEST(OptStep, ZeroGradientLeavesParams) {
  std::vector<double> p{1.0, -2.0, 3.0};
  const std::vector<double> g(3, 0.0);
  OptState s;
  opt_step(p, g, s);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 3.0}));
}

TEST(OptStep, DeterministicAndShapeChecked) {
  auto run = [] {
    Rng rng(11, streams::kTest);
    std::vector<double> p(5, 0.0);
    OptState s;
    for (int t = 0; t < 50; ++t) {
      std::vector<double> g(5);
      for (double& x : g) x = rng.normal();
      opt_step(p, g, s);
    }
    return p;
  };
  EXPECT_EQ(run(), run());
  std::vector<double> p(3, 0.0);
  OptState s;
  opt_step(p, std::vector<double>(3, 1.0), s);
  EXPECT_THROW(opt_step(p, std::vector<double>(2, 1.0), s), InvalidArgument);
}

TEST(FiniteDiff, Examples) {
  auto sq = [](std::span<const double> x) { return x[0] * x[0]; };
  EXPECT_NEAR(finite_diff_grad(sq, std::vector<double>{3.0}, 1e-5)[0], 6.0, 1e-6);
  auto constant = [](std::span<const double>) { return 4.2; };
  for (double g : finite_diff_grad(constant, std::vector<double>{1.0, 2.0, 3.0})) EXPECT_EQ(g, 0.0);
  auto ls = [](std::span<const double> x) { return log_sigmoid(x[0]); };
  // d/dx log sigma(x) at 0 is 1 - sigma(0) = 0.5; sigma'(0) = 0.25.
  auto sg = [](std::span<const double> x) { return sigmoid(x[0]); };
  EXPECT_NEAR(finite_diff_grad(sg, std::vector<double>{0.0})[0], 0.25, 1e-6);
  EXPECT_NEAR(finite_diff_grad(ls, std::vector<double>{0.0})[0], 0.5, 1e-6);
}

TEST(FiniteDiff, RejectsBadStepAndNonFinite) {
  auto sq = [](std::span<const double> x) { return x[0] * x[0]; };
  EXPECT_THROW(finite_diff_grad(sq, std::vector<double>{1.0}, 1e-2), InvalidArgument);
  EXPECT_THROW(finite_diff_grad(sq, std::vector<double>{1.0}, 1e-9), InvalidArgument);
  auto bad = [](std::span<const double> x) { return std::log(x[0]); };
  EXPECT_THROW(finite_diff_grad(bad, std::vector<double>{0.0}), Error);
}

TEST(PairwiseSum, OrderFixedByLength) {
  std::vector<double> v(1000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / (1.0 + i);
  EXPECT_EQ(pairwise_sum(v), pairwise_sum(v));
  double naive = 0.0;
  for (double x : v) naive += x;
  EXPECT_NEAR(pairwise_sum(v), naive, 1e-12);
  EXPECT_EQ(pairwise_sum(std::vector<double>{}), 0.0);
}

}  // namespace
}  // namespace flamkit
