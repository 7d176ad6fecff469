#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "sae/errors.hpp"
#include "sae/estimators.hpp"

using sae::Design;
using sae::Estimator;
using sae::Matrix;
using sae::Vector;

TEST(Wls, MatchesNormalEquations) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const auto ds = oracle::random_dataset(rng, 30, 3, 1.0);
    for (double a : {0.0, 0.3, 2.0}) {
      const Vector b = sae::wls_beta(ds.x, ds.y, a, ds.d);
      EXPECT_LT((b - oracle::gls_beta(ds.x, ds.y, a, ds.d)).norm(), 1e-10);
      EXPECT_NEAR(sae::fh_objective(a, ds.x, ds.y, ds.d), oracle::fh_equation(a, ds.x, ds.y, ds.d), 1e-9);
    }
  }
}

TEST(Wls, FitterEvaluateAgreesWithWls) {
  std::mt19937_64 rng(12);
  const auto ds = oracle::random_dataset(rng, 25, 2, 1.0);
  const Design design(ds.x, ds.d);
  sae::Fitter f(design);
  const auto e = f.evaluate(0.8, ds.y, true);
  EXPECT_NEAR(e.f, oracle::fh_equation(0.8, ds.x, ds.y, ds.d), 1e-10);
  EXPECT_LT((f.beta() - oracle::gls_beta(ds.x, ds.y, 0.8, ds.d)).norm(), 1e-12);
  // tr(P) with P = W - W X (X'WX)^{-1} X'W, computed densely.
  const Matrix w = (1.0 / (0.8 + ds.d.array())).matrix().asDiagonal();
  const Matrix p = w - w * ds.x * (ds.x.transpose() * w * ds.x).inverse() * ds.x.transpose() * w;
  EXPECT_NEAR(e.trace_p, p.trace(), 1e-10);
}

TEST(FayHerriot, InteriorRootMatchesBisection) {
  std::mt19937_64 rng(21);
  int interior = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int p = 1 + rep % 3;
    const auto ds = oracle::random_dataset(rng, 20 + rep % 30, p, 1.5);
    if (oracle::fh_equation(0.0, ds.x, ds.y, ds.d) <= 0.0) continue;
    const Design design(ds.x, ds.d);
    const auto vf = sae::fh_estimate(design, ds.y);
    const double ref = oracle::fh_bisect(ds.x, ds.y, ds.d);
    if (ref < 0.01) continue;
    ++interior;
    EXPECT_TRUE(vf.converged);
    EXPECT_FALSE(vf.was_truncated);
    EXPECT_LE(std::abs(oracle::fh_equation(vf.A_hat, ds.x, ds.y, ds.d)), 1e-8);
    EXPECT_NEAR(vf.A_hat, ref, 1e-6);
    EXPECT_LT((vf.beta_hat - oracle::gls_beta(ds.x, ds.y, vf.A_hat, ds.d)).norm(), 1e-8);
  }
  EXPECT_GT(interior, 60);
}

TEST(FayHerriot, ObjectiveDecreasesInA) {
  std::mt19937_64 rng(22);
  const auto ds = oracle::random_dataset(rng, 30, 2, 1.0);
  double prev = oracle::fh_equation(0.0, ds.x, ds.y, ds.d);
  for (double a = 0.1; a < 20.0; a *= 1.5) {
    const double f = sae::fh_objective(a, ds.x, ds.y, ds.d);
    EXPECT_LT(f, prev);
    prev = f;
  }
}

TEST(FayHerriot, NonPositiveAtZeroIsFloored) {
  // y equal to the fitted line: zero residuals, f(0) = -(m - p).
  Matrix x = Matrix::Ones(10, 2);
  Vector y(10);
  for (int i = 0; i < 10; ++i) {
    x(i, 1) = i;
    y[i] = 1.0 + 0.5 * i;
  }
  const Design design(x, Vector::Ones(10));
  const auto vf = sae::fh_estimate(design, y);
  EXPECT_TRUE(vf.was_truncated);
  EXPECT_EQ(vf.A_hat, 0.01);
  EXPECT_EQ(vf.A_raw, 0.0);
  EXPECT_NEAR(vf.beta_hat[1], 0.5, 1e-12);
}

TEST(FayHerriot, FloorIsConfigurable) {
  Vector y = Vector::Zero(6);
  const Design design = sae::intercept_design(Vector::Ones(6));
  sae::EstimatorOptions opt;
  opt.floor = 0.25;
  const auto vf = sae::fh_estimate(design, y, opt);
  EXPECT_EQ(vf.A_hat, 0.25);
  EXPECT_TRUE(vf.was_truncated);
}

TEST(PrasadRao, MatchesHatMatrixFormula) {
  std::mt19937_64 rng(31);
  for (int rep = 0; rep < 50; ++rep) {
    const auto ds = oracle::random_dataset(rng, 15 + rep % 20, 1 + rep % 3, 0.7);
    const Design design(ds.x, ds.d);
    const auto vf = sae::pr_estimate(design, ds.y);
    const double raw = oracle::pr_raw(ds.x, ds.y, ds.d);
    EXPECT_NEAR(vf.A_raw, raw, 1e-10 * (1.0 + std::abs(raw)));
    EXPECT_EQ(vf.was_truncated, raw < 0.01);
    EXPECT_EQ(vf.A_hat, vf.was_truncated ? 0.01 : vf.A_raw);
  }
}

TEST(PrasadRao, ExampleValue) {
  // Intercept only, D = 1: raw = (sum (y - ybar)^2 - (m - 1)) / (m - 1).
  Vector y(4);
  y << 0.0, 2.0, 4.0, 6.0;  // sum of squares about the mean = 20
  const auto vf = sae::pr_estimate(sae::intercept_design(Vector::Ones(4)), y);
  EXPECT_NEAR(vf.A_raw, (20.0 - 3.0) / 3.0, 1e-12);
}

TEST(Eblup, ShrinksTowardSynthetic) {
  std::mt19937_64 rng(41);
  const auto ds = oracle::random_dataset(rng, 20, 2, 1.0);
  const Design design(ds.x, ds.d);
  for (Estimator e : {Estimator::FH, Estimator::PR}) {
    const auto f = sae::fit(design, ds.y, e);
    for (Eigen::Index i = 0; i < 20; ++i) {
      const double b = ds.d[i] / (f.A_hat + ds.d[i]);
      EXPECT_NEAR(f.B_hat[i], b, 1e-15);
      EXPECT_NEAR(f.eblup[i], (1 - b) * ds.y[i] + b * f.synthetic[i], 1e-12);
      EXPECT_NEAR(f.g1_hat[i], f.A_hat * b, 1e-15);
      EXPECT_GE(f.eblup[i], std::min(ds.y[i], f.synthetic[i]) - 1e-12);
      EXPECT_LE(f.eblup[i], std::max(ds.y[i], f.synthetic[i]) + 1e-12);
    }
  }
}

TEST(Eblup, TruncationForcesStrongShrinkage) {
  const Design design = sae::intercept_design(Vector::Constant(8, 2.0));
  const auto f = sae::fit(design, Vector::Zero(8), Estimator::PR);
  EXPECT_TRUE(f.was_truncated);
  for (Eigen::Index i = 0; i < 8; ++i) EXPECT_GT(f.B_hat[i], 0.99);
}

TEST(Mspe, ComponentsAgainstDenseFormulas) {
  std::mt19937_64 rng(51);
  const auto ds = oracle::random_dataset(rng, 18, 2, 1.2);
  const Design design(ds.x, ds.d);
  for (Estimator e : {Estimator::FH, Estimator::PR}) {
    auto f = sae::fit(design, ds.y, e);
    const double a = f.A_hat;
    const auto ms = sae::mspe(f, design);
    const Matrix w = (1.0 / (a + ds.d.array())).matrix().asDiagonal();
    const Matrix inv = (ds.x.transpose() * w * ds.x).inverse();
    double var_a = 0;
    if (e == Estimator::PR) {
      for (Eigen::Index i = 0; i < 18; ++i) var_a += 2.0 * (a + ds.d[i]) * (a + ds.d[i]);
      var_a /= 18.0 * 18.0;
    } else {
      double s = 0;
      for (Eigen::Index i = 0; i < 18; ++i) s += 1.0 / ((a + ds.d[i]) * (a + ds.d[i]));
      var_a = 2.0 / s;
    }
    for (Eigen::Index i = 0; i < 18; ++i) {
      const double di = ds.d[i];
      const double b = di / (a + di);
      const double g1 = a * b;
      const double g2 = b * b * (ds.x.row(i) * inv * ds.x.row(i).transpose())(0, 0);
      const double g3 = di * di / std::pow(a + di, 3) * var_a;
      EXPECT_NEAR(ms.values[i], g1 + g2 + 2 * g3, 1e-12);
      EXPECT_GT(ms.values[i], f.g1_hat[i]);
    }
  }
}

TEST(FayHerriot, ConvergesWhenApproachingFromBelow) {
  // Count datasets whose first scoring step stays below the root; those
  // exercise the unbounded-bracket branch.
  std::mt19937_64 rng(23);
  int from_below = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const auto ds = oracle::random_dataset(rng, 40, 2, 1.0);
    const Design design(ds.x, ds.d);
    sae::Fitter f(design);
    const auto e0 = f.evaluate(0.0, ds.y, true);
    if (e0.f <= 0.0) continue;
    const double root = oracle::fh_bisect(ds.x, ds.y, ds.d);
    if (e0.f / e0.trace_p >= root) continue;
    ++from_below;
    const auto vf = f.fh(ds.y, {});
    EXPECT_TRUE(vf.converged);
    EXPECT_NEAR(vf.A_hat, std::max(root, 0.01), 1e-6);
  }
  EXPECT_GT(from_below, 10);
}
