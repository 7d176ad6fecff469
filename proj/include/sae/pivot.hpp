#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "sae/errors.hpp"
#include "sae/linking.hpp"

namespace sae {

/// Fourth moment of the standardized BLP error (theta - theta~)/sqrt(g1):
/// 3 + (D/(A+D))^2 * excess kurtosis of u.
inline double fourth_moment_H(double a, double d, double excess_kurt) {
  if (!(a > 0.0) || !(d > 0.0)) throw ConfigError("fourth_moment_H needs A > 0 and D > 0");
  const double b = d / (a + d);
  return 3.0 + b * b * excess_kurt;
}

/// Third moment of the same statistic: skewness(u) * (D/(A+D))^{3/2}.
/// Zero for symmetric families.
inline double third_moment_H(double a, double d, double skew) {
  if (!(a > 0.0) || !(d > 0.0)) throw ConfigError("third_moment_H needs A > 0 and D > 0");
  const double b = d / (a + d);
  return skew * b * std::sqrt(b);
}

enum class PivotClaim { NonPivot, Inconclusive };

inline std::string_view to_string(PivotClaim c) {
  return c == PivotClaim::NonPivot ? "NonPivot" : "Inconclusive";
}

struct PivotScanReport {
  std::vector<double> a_grid;
  std::vector<double> d_values;
  /// fourth[j][k]: moment at D = d_values[j], A = a_grid[k]
  std::vector<std::vector<double>> fourth;
  std::vector<std::vector<double>> third;
  PivotClaim claim = PivotClaim::Inconclusive;
  /// Largest range across the A-grid, over both moment channels and all D.
  double max_spread = 0.0;
};

/// Moment-based scan: if a moment of the standardized error changes with A,
/// the statistic cannot be a pivot. Constant moments prove nothing, so the
/// only other outcome is Inconclusive.
inline PivotScanReport pivot_scan(const LinkingDistribution& g, std::span<const double> d_values,
                                  std::span<const double> a_grid, double tol = 1e-6) {
  if (a_grid.size() < 2) throw ConfigError("pivot_scan needs at least two A values");
  if (d_values.empty()) throw ConfigError("pivot_scan needs at least one D value");
  for (double a : a_grid) {
    if (!(a > 0.0)) throw ConfigError("pivot_scan: A values must be positive");
  }
  const double kurt = excess_kurtosis(g);
  const double skew = skewness(g);
  PivotScanReport rep;
  rep.a_grid.assign(a_grid.begin(), a_grid.end());
  rep.d_values.assign(d_values.begin(), d_values.end());
  for (double d : d_values) {
    std::vector<double> f4, f3;
    for (double a : a_grid) {
      f4.push_back(fourth_moment_H(a, d, kurt));
      f3.push_back(third_moment_H(a, d, skew));
    }
    const auto [lo4, hi4] = std::minmax_element(f4.begin(), f4.end());
    const auto [lo3, hi3] = std::minmax_element(f3.begin(), f3.end());
    rep.max_spread = std::max({rep.max_spread, *hi4 - *lo4, *hi3 - *lo3});
    rep.fourth.push_back(std::move(f4));
    rep.third.push_back(std::move(f3));
  }
  rep.claim = rep.max_spread > tol ? PivotClaim::NonPivot : PivotClaim::Inconclusive;
  return rep;
}

struct MonteCarloMoment {
  double value = 0.0;
  double std_error = 0.0;
};

/// Empirical fourth moment of (B u - (1-B) e)/sqrt(g1) with u ~ G(0, A) and
/// e ~ N(0, D); the standard error comes from the sample variance of h^4.
template <class URBG>
MonteCarloMoment mc_fourth_moment(const LinkingDistribution& g, double a, double d,
                                  std::size_t n_draws, URBG& rng) {
  if (n_draws < 10000) throw ConfigError("mc_fourth_moment needs at least 1e4 draws");
  if (!(a > 0.0) || !(d > 0.0)) throw ConfigError("mc_fourth_moment needs A > 0 and D > 0");
  StandardizedSampler sampler(g);
  std::normal_distribution<double> noise;
  const double b = d / (a + d);
  const double inv_sqrt_g1 = 1.0 / std::sqrt(a * b);
  const double sa = std::sqrt(a);
  const double sd = std::sqrt(d);
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t n = 1; n <= n_draws; ++n) {
    const double u = sa * sampler(rng);
    const double e = sd * noise(rng);
    const double h = (b * u - (1.0 - b) * e) * inv_sqrt_g1;
    const double h4 = (h * h) * (h * h);
    const double delta = h4 - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (h4 - mean);
  }
  const auto nd = static_cast<double>(n_draws);
  return {mean, std::sqrt(m2 / (nd - 1.0) / nd)};
}

}  // namespace sae
