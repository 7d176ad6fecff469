#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sae/errors.hpp"
#include "sae/estimators.hpp"
#include "sae/quantile.hpp"

namespace sae {

enum class Method { Direct, TradFH, TradPR, SB_FH, SB_PR, HM_FH, HM_PR, DB_FH, DB_PR };

inline constexpr std::array<Method, 9> kAllMethods = {
    Method::Direct, Method::TradFH, Method::TradPR, Method::SB_FH, Method::SB_PR,
    Method::HM_FH,  Method::HM_PR,  Method::DB_FH,  Method::DB_PR};

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::Direct: return "Direct";
    case Method::TradFH: return "TradFH";
    case Method::TradPR: return "TradPR";
    case Method::SB_FH: return "SB_FH";
    case Method::SB_PR: return "SB_PR";
    case Method::HM_FH: return "HM_FH";
    case Method::HM_PR: return "HM_PR";
    case Method::DB_FH: return "DB_FH";
    case Method::DB_PR: return "DB_PR";
  }
  return "?";
}

/// Column label used in reports and reference tables (SB.FH, FH, DIRECT, ...).
inline std::string_view table_label(Method m) {
  switch (m) {
    case Method::Direct: return "DIRECT";
    case Method::TradFH: return "FH";
    case Method::TradPR: return "PR";
    case Method::SB_FH: return "SB.FH";
    case Method::SB_PR: return "SB.PR";
    case Method::HM_FH: return "HM.FH";
    case Method::HM_PR: return "HM.PR";
    case Method::DB_FH: return "DB.FH";
    case Method::DB_PR: return "DB.PR";
  }
  return "?";
}

/// Accepts either spelling: "SB_FH" / "SB.FH", "TradFH" / "FH", "Direct" / "DIRECT".
inline Method parse_method(std::string_view s) {
  for (Method m : kAllMethods) {
    if (s == to_string(m) || s == table_label(m)) return m;
  }
  if (s == "direct") return Method::Direct;
  throw ConfigError("unknown interval method '" + std::string(s) + "'");
}

/// Estimator behind a model-based method; Direct has none.
inline std::optional<Estimator> estimator_of(Method m) {
  switch (m) {
    case Method::Direct: return std::nullopt;
    case Method::TradFH:
    case Method::SB_FH:
    case Method::HM_FH:
    case Method::DB_FH: return Estimator::FH;
    default: return Estimator::PR;
  }
}

struct PredictionInterval {
  std::size_t area_index = 0;
  double lower = 0.0;
  double upper = 0.0;
  Method method = Method::Direct;
  double nominal = 0.95;  ///< nominal coverage level in (0,1)
  std::optional<double> q_lower;  ///< calibrated lower quantile (bootstrap methods)
  std::optional<double> q_upper;
  std::optional<double> level_lower;  ///< calibrated quantile levels (double bootstrap)
  std::optional<double> level_upper;

  double length() const noexcept { return upper - lower; }
  bool covers(double theta) const noexcept { return lower <= theta && theta <= upper; }
};

/// y_i -/+ z sqrt(D_i).
inline PredictionInterval direct_interval(double y, double d, double nominal,
                                          std::size_t area = 0) {
  if (!(d > 0.0)) throw ConfigError("direct interval needs D > 0");
  const double half = two_sided_z(nominal) * std::sqrt(d);
  PredictionInterval pi;
  pi.area_index = area;
  pi.lower = y - half;
  pi.upper = y + half;
  pi.method = Method::Direct;
  pi.nominal = nominal;
  return pi;
}

inline std::vector<PredictionInterval> direct_intervals(const Vector& y, const Vector& d,
                                                        double nominal) {
  std::vector<PredictionInterval> out;
  out.reserve(static_cast<std::size_t>(y.size()));
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    out.push_back(direct_interval(y[i], d[i], nominal, static_cast<std::size_t>(i)));
  }
  return out;
}

/// EBLUP -/+ z sqrt(mspe_i).
inline std::vector<PredictionInterval> traditional_interval(const FitResult& fit,
                                                            const MspeEstimate& mspe,
                                                            double nominal) {
  if (fit.eblup.size() != mspe.values.size()) {
    throw ConfigError("traditional_interval: fit and mspe sizes differ");
  }
  const double z = two_sided_z(nominal);
  const Method method = fit.method == Estimator::FH ? Method::TradFH : Method::TradPR;
  std::vector<PredictionInterval> out(static_cast<std::size_t>(fit.eblup.size()));
  for (Eigen::Index i = 0; i < fit.eblup.size(); ++i) {
    if (!(mspe.values[i] > 0.0)) throw NumericError("non-positive mspe");
    auto& pi = out[static_cast<std::size_t>(i)];
    const double half = z * std::sqrt(mspe.values[i]);
    pi.area_index = static_cast<std::size_t>(i);
    pi.lower = fit.eblup[i] - half;
    pi.upper = fit.eblup[i] + half;
    pi.method = method;
    pi.nominal = nominal;
  }
  return out;
}

}  // namespace sae
