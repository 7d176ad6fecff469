#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "sae/bootstrap.hpp"
#include "sae/errors.hpp"

using sae::BootstrapConfig;
using sae::Design;
using sae::Estimator;
using sae::LinkingDistribution;
using sae::StreamKey;
using sae::Vector;

namespace {

struct Setup {
  oracle::Dataset ds;
  Design design;
  sae::FitResult fit;
  BootstrapConfig cfg;
};

Setup make_setup(Estimator e, int m = 15, std::uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  auto ds = oracle::random_dataset(rng, m, 2, 1.0);
  Design design(ds.x, ds.d);
  auto f = sae::fit(design, ds.y, e);
  BootstrapConfig cfg;
  cfg.b1 = 60;
  cfg.b2 = 20;
  cfg.estimator = e;
  return {std::move(ds), std::move(design), std::move(f), cfg};
}

// One replicate drawn by hand: theta = mean + sqrt(A) u, y = theta + sqrt(D) z
// in area order, then H for every area.
Vector manual_pivots(const Design& design, const Vector& mean, double a, const LinkingDistribution& g,
                     Estimator e, sae::Engine rng, sae::VarianceFit* fit_out = nullptr) {
  sae::StandardizedSampler s(g);
  std::normal_distribution<double> z;
  const auto m = design.m();
  Vector theta(m), y(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    theta[i] = mean[i] + std::sqrt(a) * s(rng);
    y[i] = theta[i] + std::sqrt(design.d()[i]) * z(rng);
  }
  const auto vf = e == Estimator::FH ? sae::fh_estimate(design, y) : sae::pr_estimate(design, y);
  if (fit_out) *fit_out = vf;
  const auto f = sae::eblup(design, y, vf);
  Vector h(m);
  for (Eigen::Index i = 0; i < m; ++i) h[i] = (theta[i] - f.eblup[i]) / std::sqrt(f.g1_hat[i]);
  return h;
}

}  // namespace

TEST(Bootstrap, ConfigValidation) {
  BootstrapConfig c;
  c.b1 = 49;
  EXPECT_THROW(c.validate(false), sae::ConfigError);
  c.b1 = 50;
  EXPECT_NO_THROW(c.validate(false));
  c.b2 = 19;
  EXPECT_THROW(c.validate(true), sae::ConfigError);
  c.b2 = 0;
  EXPECT_THROW(c.validate(true), sae::ConfigError);
  EXPECT_NO_THROW(c.validate(false));
}

TEST(Bootstrap, ReplicateMatchesHandComputation) {
  for (Estimator e : {Estimator::FH, Estimator::PR}) {
    auto s = make_setup(e);
    const auto g = LinkingDistribution::student_t(9);
    const StreamKey key(99);
    const auto dist = sae::sb_distribution(s.design, s.ds.y, s.fit, g, s.cfg, key);
    for (std::uint64_t b : {0u, 17u, 59u}) {
      sae::VarianceFit vf;
      const Vector h = manual_pivots(s.design, s.fit.synthetic, s.fit.A_hat, g, e,
                                     key.child(0).child(b).engine(), &vf);
      for (Eigen::Index i = 0; i < s.design.m(); ++i) {
        EXPECT_NEAR(dist.pivot(i, static_cast<Eigen::Index>(b)), h[i], 1e-9);
      }
      EXPECT_NEAR(dist.a_star[static_cast<Eigen::Index>(b)], vf.A_hat, 1e-10);
    }
  }
}

TEST(Bootstrap, WorkerCountDoesNotChangeResults) {
  auto s = make_setup(Estimator::FH);
  const auto g = LinkingDistribution::shifted_exponential();
  const StreamKey key(5);
  const auto d1 = sae::sb_distribution(s.design, s.ds.y, s.fit, g, s.cfg, key);
  const auto c1 = sae::db_calibrate(s.design, d1, g, s.cfg, key);
  s.cfg.workers = 4;
  const auto d4 = sae::sb_distribution(s.design, s.ds.y, s.fit, g, s.cfg, key);
  const auto c4 = sae::db_calibrate(s.design, d4, g, s.cfg, key);
  EXPECT_TRUE(d1.pivot == d4.pivot);
  EXPECT_TRUE(d1.synthetic == d4.synthetic);
  EXPECT_TRUE(c1.z == c4.z);
  EXPECT_EQ(c1.second_stage_truncated, c4.second_stage_truncated);
}

TEST(Bootstrap, SingleIntervalUsesOrderStatistics) {
  auto s = make_setup(Estimator::FH);
  const auto dist = sae::sb_distribution(s.design, s.ds.y, s.fit, LinkingDistribution::normal(), s.cfg,
                                         StreamKey(1));
  const auto ints = sae::sb_interval(dist, s.fit, 0.9);
  for (Eigen::Index i = 0; i < s.design.m(); ++i) {
    std::vector<double> row(dist.pivot.row(i).begin(), dist.pivot.row(i).end());
    std::sort(row.begin(), row.end());
    // B1 = 60: ceil(0.05 * 60) = 3, ceil(0.95 * 60) = 57
    const auto& pi = ints[static_cast<std::size_t>(i)];
    EXPECT_EQ(*pi.q_lower, row[2]);
    EXPECT_EQ(*pi.q_upper, row[56]);
    EXPECT_NEAR(pi.lower, s.fit.eblup[i] + row[2] * std::sqrt(s.fit.g1_hat[i]), 1e-12);
    EXPECT_LT(pi.lower, s.fit.eblup[i]);
    EXPECT_GT(pi.upper, s.fit.eblup[i]);
  }
}

TEST(Bootstrap, DoubleWithFixedLevelsEqualsSingle) {
  auto s = make_setup(Estimator::PR);
  const auto dist = sae::sb_distribution(s.design, s.ds.y, s.fit, LinkingDistribution::logistic(), s.cfg,
                                         StreamKey(2));
  const auto m = static_cast<std::size_t>(s.design.m());
  const auto fixed = sae::calibrated_interval(dist, s.fit, 0.8, std::vector<double>(m, 0.1),
                                              std::vector<double>(m, 0.9), sae::Method::DB_PR);
  const auto single = sae::sb_interval(dist, s.fit, 0.8);
  for (std::size_t i = 0; i < m; ++i) {
    EXPECT_EQ(fixed[i].lower, single[i].lower);
    EXPECT_EQ(fixed[i].upper, single[i].upper);
  }
}

TEST(Bootstrap, CalibrationMatchesHandCount) {
  auto s = make_setup(Estimator::FH);
  const auto g = LinkingDistribution::student_t(9);
  const StreamKey key(8);
  const auto dist = sae::sb_distribution(s.design, s.ds.y, s.fit, g, s.cfg, key);
  const auto cal = sae::db_calibrate(s.design, dist, g, s.cfg, key);
  const Eigen::Index j = 7;
  const Vector mean = s.design.x() * dist.beta_star.col(j);
  std::vector<int> counts(static_cast<std::size_t>(s.design.m()), 0);
  for (int k = 0; k < s.cfg.b2; ++k) {
    const Vector h = manual_pivots(s.design, mean, dist.a_star[j], g, Estimator::FH,
                                   key.child(1).child(j).child(static_cast<std::uint64_t>(k)).engine());
    for (Eigen::Index i = 0; i < s.design.m(); ++i) {
      if (h[i] <= dist.pivot(i, j)) ++counts[static_cast<std::size_t>(i)];
    }
  }
  for (Eigen::Index i = 0; i < s.design.m(); ++i) {
    EXPECT_DOUBLE_EQ(cal.z(i, j), counts[static_cast<std::size_t>(i)] / 20.0);
  }
}

TEST(Bootstrap, CalibratedLevelsAreProportions) {
  auto s = make_setup(Estimator::PR, 10, 12);
  const auto g = LinkingDistribution::shifted_exponential();
  const auto dist = sae::sb_distribution(s.design, s.ds.y, s.fit, g, s.cfg, StreamKey(4));
  const auto cal = sae::db_calibrate(s.design, dist, g, s.cfg, StreamKey(4));
  EXPECT_EQ(cal.second_stage_fits, 60u * 20u);
  for (Eigen::Index i = 0; i < cal.z.rows(); ++i) {
    for (Eigen::Index j = 0; j < cal.z.cols(); ++j) {
      const double z = cal.z(i, j);
      EXPECT_GE(z, 0.0);
      EXPECT_LE(z, 1.0);
      EXPECT_DOUBLE_EQ(z * 20.0, std::round(z * 20.0));
    }
  }
  for (double lvl : {0.8, 0.9, 0.95}) {
    for (const auto& pi : sae::db_interval(dist, cal, s.fit, lvl)) {
      ASSERT_TRUE(pi.level_lower && pi.level_upper);
      EXPECT_GE(*pi.level_lower, 0.0);
      EXPECT_LE(*pi.level_upper, 1.0);
      EXPECT_LE(*pi.level_lower, *pi.level_upper);
    }
  }
}

TEST(Bootstrap, SyntheticIntervalIgnoresDirectEstimates) {
  auto s = make_setup(Estimator::FH);
  const auto dist = sae::sb_distribution(s.design, s.ds.y, s.fit, LinkingDistribution::normal(), s.cfg,
                                         StreamKey(6));
  auto shifted = s.fit;
  shifted.eblup.array() += 10.0;
  const auto a = sae::hm_interval(dist, s.fit, 0.95);
  const auto b = sae::hm_interval(dist, shifted, 0.95);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].lower, b[i].lower);
    EXPECT_EQ(a[i].method, sae::Method::HM_FH);
  }
}

TEST(Bootstrap, EblupSourceFlagChangesPivots) {
  auto s = make_setup(Estimator::FH);
  const auto g = LinkingDistribution::normal();
  const auto base = sae::sb_distribution(s.design, s.ds.y, s.fit, g, s.cfg, StreamKey(3));
  s.cfg.eblup_star_uses_original_y = true;
  const auto alt = sae::sb_distribution(s.design, s.ds.y, s.fit, g, s.cfg, StreamKey(3));
  EXPECT_FALSE(base.pivot == alt.pivot);
  EXPECT_TRUE(base.a_star == alt.a_star);
}

TEST(Bootstrap, EstimatorMismatchRejected) {
  auto s = make_setup(Estimator::FH);
  s.cfg.estimator = Estimator::PR;
  EXPECT_THROW(sae::sb_distribution(s.design, s.ds.y, s.fit, LinkingDistribution::normal(), s.cfg,
                                    StreamKey(0)),
               sae::ConfigError);
}

TEST(Bootstrap, ConvenienceEntryPointsAreSeeded) {
  auto s = make_setup(Estimator::FH);
  s.cfg.seed = 31;
  const auto a = sae::db_interval(s.design, s.ds.y, LinkingDistribution::normal(), s.cfg, 0.9);
  const auto b = sae::db_interval(s.design, s.ds.y, LinkingDistribution::normal(), s.cfg, 0.9);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].lower, b[i].lower);
    EXPECT_EQ(a[i].upper, b[i].upper);
  }
}
