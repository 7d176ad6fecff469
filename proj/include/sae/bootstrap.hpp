#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "sae/errors.hpp"
#include "sae/estimators.hpp"
#include "sae/intervals.hpp"
#include "sae/linking.hpp"
#include "sae/model.hpp"
#include "sae/parallel.hpp"
#include "sae/quantile.hpp"
#include "sae/random.hpp"

namespace sae {

struct BootstrapConfig {
  int b1 = 400;  ///< first-stage replicates
  int b2 = 100;  ///< second-stage replicates per first-stage replicate
  Estimator estimator = Estimator::FH;
  std::uint64_t seed = 0;
  EstimatorOptions estimation{};
  /// Compute the bootstrap EBLUP from the parent-stage data (original y in
  /// the first stage) instead of the resampled y*. Off by default.
  bool eblup_star_uses_original_y = false;
  unsigned workers = 1;

  void validate(bool second_stage) const {
    if (b1 < 50) throw ConfigError("B1 must be at least 50, got " + std::to_string(b1));
    if (second_stage && b2 <= 0) throw ConfigError("double bootstrap needs B2 > 0");
    if (second_stage && b2 < 20) throw ConfigError("B2 must be at least 20, got " + std::to_string(b2));
  }
};

/// First-stage replicate set. Statistics are stored area-major: entry (i, b)
/// of pivot() is H_i for replicate b, so each replicate fills one contiguous
/// column and area i's bootstrap sample is row i.
struct BootstrapDistribution {
  Estimator estimator = Estimator::FH;
  Matrix pivot;      ///< m x B1, (theta* - theta^*) / sqrt(g1^*)
  Matrix synthetic;  ///< m x B1, (theta* - x'beta^*) / sqrt(A^*)
  Matrix y_star;     ///< m x B1 resampled direct estimates
  Matrix beta_star;  ///< p x B1
  Vector a_star;     ///< B1
  std::vector<char> truncated;  ///< B1 flags

  Eigen::Index replicates() const noexcept { return pivot.cols(); }
  Eigen::Index areas() const noexcept { return pivot.rows(); }
  double h(Eigen::Index b, Eigen::Index i) const { return pivot(i, b); }
  std::size_t truncated_count() const {
    return static_cast<std::size_t>(std::count(truncated.begin(), truncated.end(), char{1}));
  }
};

namespace detail {

/// Per-thread buffers for one replicate draw + refit.
struct ReplicateWorkspace {
  explicit ReplicateWorkspace(const Design& design)
      : fitter(design),
        theta(design.m()),
        y(design.m()),
        mean(design.m()),
        h(design.m()),
        msyn(design.m()) {}
  Fitter fitter;
  Vector theta;
  Vector y;
  Vector mean;
  Vector h;
  Vector msyn;
};

/// Draws theta ~ G(mean, a), y ~ N(theta, D), refits, and writes the EBL
/// pivot H and the synthetic statistic M for every area. parent_y is the data
/// the bootstrap EBLUP uses when the compatibility flag is set.
template <class Writer>
VarianceFit draw_and_refit(ReplicateWorkspace& ws, const Eigen::Ref<const Vector>& mean,
                           double a, const LinkingDistribution& g,
                           const Eigen::Ref<const Vector>& parent_y, const BootstrapConfig& cfg,
                           Engine rng, Writer&& write) {
  const Design& design = ws.fitter.design();
  StandardizedSampler linking(g);
  std::normal_distribution<double> noise;
  draw_two_level(mean, a, design.d(), linking, noise, rng, ws.theta, ws.y);
  VarianceFit vf = ws.fitter.estimate(cfg.estimator, ws.y, cfg.estimation);
  const Matrix& x = design.x();
  const Vector& d = design.d();
  const double* y_for_eblup = cfg.eblup_star_uses_original_y ? parent_y.data() : ws.y.data();
  const double sa = std::sqrt(vf.A_hat);
  for (Eigen::Index i = 0; i < design.m(); ++i) {
    double synth = 0.0;
    for (Eigen::Index k = 0; k < design.p(); ++k) synth += x(i, k) * vf.beta_hat[k];
    const double b = d[i] / (vf.A_hat + d[i]);
    const double pred = (1.0 - b) * y_for_eblup[i] + b * synth;
    ws.h[i] = (ws.theta[i] - pred) / std::sqrt(vf.A_hat * b);
    ws.msyn[i] = (ws.theta[i] - synth) / sa;
    if (!std::isfinite(ws.h[i]) || !std::isfinite(ws.msyn[i])) {
      throw NumericError("non-finite bootstrap statistic");
    }
  }
  for (Eigen::Index i = 0; i < design.m(); ++i) write(i, ws.h[i], ws.msyn[i]);
  return vf;
}

/// Runs draw_and_refit with one retry on a fresh sub-seed; a second failure
/// aborts, naming the replicate via describe().
template <class Describe, class Writer>
VarianceFit replicate_with_retry(ReplicateWorkspace& ws, const Eigen::Ref<const Vector>& mean,
                                 double a, const LinkingDistribution& g,
                                 const Eigen::Ref<const Vector>& parent_y,
                                 const BootstrapConfig& cfg, const StreamKey& key,
                                 Describe&& describe, Writer&& write) {
  try {
    return draw_and_refit(ws, mean, a, g, parent_y, cfg, key.engine(), write);
  } catch (const NumericError&) {
  } catch (const SingularDesignError&) {
  }
  try {
    return draw_and_refit(ws, mean, a, g, parent_y, cfg, key.child(0xFFFFFFFFu).engine(), write);
  } catch (const std::exception& e) {
    throw NumericError("bootstrap " + describe() + " failed after retry: " + e.what());
  }
}

inline Method single_method(Estimator e) { return e == Estimator::FH ? Method::SB_FH : Method::SB_PR; }
inline Method synthetic_method(Estimator e) { return e == Estimator::FH ? Method::HM_FH : Method::HM_PR; }
inline Method double_method(Estimator e) { return e == Estimator::FH ? Method::DB_FH : Method::DB_PR; }

inline double tail_of(double nominal) {
  if (!(nominal > 0.0 && nominal < 1.0)) throw ConfigError("nominal level must lie in (0,1)");
  return 0.5 * (1.0 - nominal);
}

inline void sorted_row(const Matrix& m, Eigen::Index i, std::vector<double>& buf) {
  buf.resize(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index b = 0; b < m.cols(); ++b) buf[static_cast<std::size_t>(b)] = m(i, b);
  std::sort(buf.begin(), buf.end());
}

}  // namespace detail

/// First-stage parametric bootstrap around a fitted model: B1 replicates from
/// G(x'beta^, A^), each refit with the configured estimator. Replicate b uses
/// the substream key.child(0).child(b).
inline BootstrapDistribution sb_distribution(const Design& design, const Vector& y,
                                             const FitResult& fit, const LinkingDistribution& g,
                                             const BootstrapConfig& cfg, const StreamKey& key) {
  cfg.validate(false);
  if (fit.method != cfg.estimator) {
    throw ConfigError("fit estimator and bootstrap estimator differ");
  }
  const Eigen::Index m = design.m();
  const auto b1 = static_cast<Eigen::Index>(cfg.b1);
  BootstrapDistribution dist;
  dist.estimator = cfg.estimator;
  dist.pivot.resize(m, b1);
  dist.synthetic.resize(m, b1);
  dist.y_star.resize(m, b1);
  dist.beta_star.resize(design.p(), b1);
  dist.a_star.resize(b1);
  dist.truncated.assign(static_cast<std::size_t>(b1), 0);
  const StreamKey stage = key.child(0);
  parallel_for(
      static_cast<std::size_t>(b1), cfg.workers,
      [&] { return detail::ReplicateWorkspace(design); },
      [&](detail::ReplicateWorkspace& ws, std::size_t bi) {
        const auto b = static_cast<Eigen::Index>(bi);
        const VarianceFit vf = detail::replicate_with_retry(
            ws, fit.synthetic, fit.A_hat, g, y, cfg, stage.child(bi),
            [&] { return "replicate " + std::to_string(bi); },
            [&](Eigen::Index i, double h, double ms) {
              dist.pivot(i, b) = h;
              dist.synthetic(i, b) = ms;
            });
        dist.y_star.col(b) = ws.y;
        dist.beta_star.col(b) = vf.beta_hat;
        dist.a_star[b] = vf.A_hat;
        dist.truncated[bi] = vf.was_truncated ? 1 : 0;
      });
  return dist;
}

/// Interval theta^_i + q sqrt(g1^_i) with q the empirical level_l / level_u
/// quantiles of area i's bootstrap pivots. Shared by the single and double
/// bootstrap so that fixing the levels at (tail, 1 - tail) reproduces the
/// single-bootstrap interval exactly.
inline std::vector<PredictionInterval> calibrated_interval(
    const BootstrapDistribution& dist, const FitResult& fit, double nominal,
    const std::vector<double>& level_l, const std::vector<double>& level_u, Method method) {
  const Eigen::Index m = dist.areas();
  if (fit.eblup.size() != m) throw ConfigError("fit and bootstrap distribution sizes differ");
  std::vector<PredictionInterval> out(static_cast<std::size_t>(m));
  std::vector<double> buf;
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    detail::sorted_row(dist.pivot, i, buf);
    const double ql = empirical_quantile(buf, level_l[ui]);
    const double qu = empirical_quantile(buf, level_u[ui]);
    if (!(qu > ql)) {
      throw NumericError("zero-width quantile spread for area " + std::to_string(i + 1));
    }
    const double s = std::sqrt(fit.g1_hat[i]);
    auto& pi = out[ui];
    pi.area_index = ui;
    pi.lower = fit.eblup[i] + ql * s;
    pi.upper = fit.eblup[i] + qu * s;
    pi.method = method;
    pi.nominal = nominal;
    pi.q_lower = ql;
    pi.q_upper = qu;
  }
  return out;
}

/// Single parametric bootstrap EBL interval.
inline std::vector<PredictionInterval> sb_interval(const BootstrapDistribution& dist,
                                                   const FitResult& fit, double nominal) {
  const double tail = detail::tail_of(nominal);
  const auto m = static_cast<std::size_t>(dist.areas());
  return calibrated_interval(dist, fit, nominal, std::vector<double>(m, tail),
                             std::vector<double>(m, 1.0 - tail),
                             detail::single_method(dist.estimator));
}

/// Synthetic (Hall-Maiti) interval x'beta^ + b sqrt(A^), with b the empirical
/// quantiles of (theta* - x'beta^*)/sqrt(A^*). Depends on y only through
/// (beta^, A^).
inline std::vector<PredictionInterval> hm_interval(const BootstrapDistribution& dist,
                                                   const FitResult& fit, double nominal) {
  const double tail = detail::tail_of(nominal);
  const Eigen::Index m = dist.areas();
  if (fit.synthetic.size() != m) throw ConfigError("fit and bootstrap distribution sizes differ");
  const double sa = std::sqrt(fit.A_hat);
  std::vector<PredictionInterval> out(static_cast<std::size_t>(m));
  std::vector<double> buf;
  for (Eigen::Index i = 0; i < m; ++i) {
    detail::sorted_row(dist.synthetic, i, buf);
    const double bl = empirical_quantile(buf, tail);
    const double bu = empirical_quantile(buf, 1.0 - tail);
    if (!(bu > bl)) {
      throw NumericError("zero-width quantile spread for area " + std::to_string(i + 1));
    }
    auto& pi = out[static_cast<std::size_t>(i)];
    pi.area_index = static_cast<std::size_t>(i);
    pi.lower = fit.synthetic[i] + bl * sa;
    pi.upper = fit.synthetic[i] + bu * sa;
    pi.method = detail::synthetic_method(dist.estimator);
    pi.nominal = nominal;
    pi.q_lower = bl;
    pi.q_upper = bu;
  }
  return out;
}

/// Second-stage output: Z(i, j) is the fraction of the B2 second-stage
/// pivots H** for area i that are <= the first-stage pivot H*_j.
struct DoubleBootstrapCalibration {
  Matrix z;  ///< m x B1
  std::size_t second_stage_fits = 0;
  std::size_t second_stage_truncated = 0;
};

/// Second stage of the double bootstrap. For first-stage replicate j, B2
/// replicates are drawn from G(x'beta^*_j, A^*_j) and refit; replicate k uses
/// key.child(1).child(j).child(k). Z does not depend on the nominal level,
/// so one calibration serves every level.
inline DoubleBootstrapCalibration db_calibrate(const Design& design,
                                               const BootstrapDistribution& dist,
                                               const LinkingDistribution& g,
                                               const BootstrapConfig& cfg, const StreamKey& key) {
  cfg.validate(true);
  if (dist.estimator != cfg.estimator) throw ConfigError("bootstrap estimator mismatch");
  const Eigen::Index m = design.m();
  const Eigen::Index b1 = dist.replicates();
  const int b2 = cfg.b2;
  DoubleBootstrapCalibration cal;
  cal.z.resize(m, b1);
  std::vector<std::size_t> truncations(static_cast<std::size_t>(b1), 0);
  const StreamKey stage = key.child(1);

  struct State {
    detail::ReplicateWorkspace ws;
    std::vector<int> counts;
  };
  parallel_for(
      static_cast<std::size_t>(b1), cfg.workers,
      [&] { return State{detail::ReplicateWorkspace(design), std::vector<int>(static_cast<std::size_t>(m))}; },
      [&](State& st, std::size_t ji) {
        const auto j = static_cast<Eigen::Index>(ji);
        st.ws.mean.noalias() = design.x() * dist.beta_star.col(j);
        std::fill(st.counts.begin(), st.counts.end(), 0);
        const StreamKey sub = stage.child(ji);
        std::size_t trunc = 0;
        for (int k = 0; k < b2; ++k) {
          const VarianceFit vf = detail::replicate_with_retry(
              st.ws, st.ws.mean, dist.a_star[j], g, dist.y_star.col(j), cfg,
              sub.child(static_cast<std::uint64_t>(k)),
              [&] { return "second-stage replicate (" + std::to_string(ji) + ", " + std::to_string(k) + ")"; },
              [&](Eigen::Index i, double h, double) {
                if (h <= dist.pivot(i, j)) ++st.counts[static_cast<std::size_t>(i)];
              });
          if (vf.was_truncated) ++trunc;
        }
        for (Eigen::Index i = 0; i < m; ++i) {
          cal.z(i, j) = static_cast<double>(st.counts[static_cast<std::size_t>(i)]) / b2;
        }
        truncations[ji] = trunc;
      });
  cal.second_stage_fits = static_cast<std::size_t>(b1) * static_cast<std::size_t>(b2);
  for (std::size_t t : truncations) cal.second_stage_truncated += t;
  return cal;
}

/// Calibrated quantile levels for area i: the tail and 1 - tail empirical
/// quantiles of {Z_j}. Order statistics of proportions, so always in [0, 1].
inline std::pair<double, double> db_levels(const DoubleBootstrapCalibration& cal, Eigen::Index i,
                                           double nominal) {
  const double tail = detail::tail_of(nominal);
  std::vector<double> buf;
  detail::sorted_row(cal.z, i, buf);
  return {empirical_quantile(buf, tail), empirical_quantile(buf, 1.0 - tail)};
}

/// Double-bootstrap EBL interval: the single-bootstrap construction evaluated
/// at the calibrated levels.
inline std::vector<PredictionInterval> db_interval(const BootstrapDistribution& dist,
                                                   const DoubleBootstrapCalibration& cal,
                                                   const FitResult& fit, double nominal) {
  const Eigen::Index m = dist.areas();
  if (cal.z.rows() != m || cal.z.cols() != dist.replicates()) {
    throw ConfigError("calibration does not match the bootstrap distribution");
  }
  std::vector<double> lo(static_cast<std::size_t>(m)), hi(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    std::tie(lo[static_cast<std::size_t>(i)], hi[static_cast<std::size_t>(i)]) = db_levels(cal, i, nominal);
  }
  auto out = calibrated_interval(dist, fit, nominal, lo, hi, detail::double_method(dist.estimator));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].level_lower = lo[i];
    out[i].level_upper = hi[i];
  }
  return out;
}

// Convenience entry points that fit the model and run the resampling in one call.

inline std::vector<PredictionInterval> sb_interval(const Design& design, const Vector& y,
                                                   const LinkingDistribution& g,
                                                   const BootstrapConfig& cfg, double nominal) {
  const FitResult f = fit(design, y, cfg.estimator, cfg.estimation);
  return sb_interval(sb_distribution(design, y, f, g, cfg, StreamKey(cfg.seed)), f, nominal);
}

inline std::vector<PredictionInterval> hm_interval(const Design& design, const Vector& y,
                                                   const LinkingDistribution& g,
                                                   const BootstrapConfig& cfg, double nominal) {
  const FitResult f = fit(design, y, cfg.estimator, cfg.estimation);
  return hm_interval(sb_distribution(design, y, f, g, cfg, StreamKey(cfg.seed)), f, nominal);
}

inline std::vector<PredictionInterval> db_interval(const Design& design, const Vector& y,
                                                   const LinkingDistribution& g,
                                                   const BootstrapConfig& cfg, double nominal) {
  cfg.validate(true);
  const FitResult f = fit(design, y, cfg.estimator, cfg.estimation);
  const StreamKey key(cfg.seed);
  const BootstrapDistribution dist = sb_distribution(design, y, f, g, cfg, key);
  return db_interval(dist, db_calibrate(design, dist, g, cfg, key), f, nominal);
}

}  // namespace sae
