#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "sae/errors.hpp"

namespace sae {

/// Order-statistic quantile of sorted data: v_(ceil(gamma * B)), with
/// gamma <= 0 mapping to the minimum and gamma >= 1 to the maximum. No
/// interpolation. A relative slack of 1e-12 keeps products such as
/// 0.975 * 200 from rounding up past an exact integer.
inline double empirical_quantile(std::span<const double> sorted, double gamma) {
  if (sorted.empty()) throw ConfigError("quantile of an empty sample");
  const auto n = static_cast<double>(sorted.size());
  if (!(gamma > 0.0)) return sorted.front();
  double k = std::ceil(gamma * n * (1.0 - 1e-12));
  k = std::clamp(k, 1.0, n);
  return sorted[static_cast<std::size_t>(k) - 1];
}

/// Sorts a copy and returns empirical_quantile.
inline double empirical_quantile_unsorted(std::span<const double> values, double gamma) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  return empirical_quantile(v, gamma);
}

/// Standard normal quantile Phi^{-1}(p).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("normal_quantile needs p in (0,1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

/// Two-sided critical value z_{(1-level)/2} for a nominal coverage level.
inline double two_sided_z(double level) {
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("nominal level must lie in (0,1)");
  return normal_quantile(0.5 + 0.5 * level);
}

}  // namespace sae
