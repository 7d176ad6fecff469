#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sae/bootstrap.hpp"
#include "sae/errors.hpp"
#include "sae/estimators.hpp"
#include "sae/intervals.hpp"
#include "sae/linking.hpp"
#include "sae/model.hpp"
#include "sae/parallel.hpp"
#include "sae/random.hpp"

namespace sae {

inline const std::vector<double> kPatternOne = {4.0, 0.6, 0.5, 0.4, 0.2};
inline const std::vector<double> kPatternTwo = {8.0, 1.2, 1.0, 0.8, 0.4};

/// One Monte Carlo experiment. Areas are split into pattern.size() equal
/// groups; group g shares sampling variance pattern[g].
struct ScenarioConfig {
  int m = 50;
  std::string pattern_name = "P1";
  std::vector<double> pattern = kPatternOne;
  double A = 1.0;
  LinkingDistribution G = LinkingDistribution::student_t(9.0);
  /// Regression coefficients; beta[0] multiplies the intercept.
  std::vector<double> beta = {0.0};
  int n_sims = 500;
  int B1 = 200;
  int B2 = 50;
  std::vector<double> alphas = {0.80, 0.90, 0.95};
  std::vector<Method> methods = {Method::SB_FH, Method::HM_FH, Method::SB_PR, Method::HM_PR,
                                 Method::TradFH, Method::TradPR, Method::Direct};
  std::uint64_t seed = 0;
  unsigned workers = 1;
  std::string profile = "desk";
  EstimatorOptions estimation{};
  bool eblup_star_uses_original_y = false;

  int groups() const { return static_cast<int>(pattern.size()); }
  int group_size() const { return m / groups(); }
  int group_of(int area) const { return area / group_size(); }

  bool uses(Method method) const {
    return std::find(methods.begin(), methods.end(), method) != methods.end();
  }

  void validate() const {
    if (pattern.empty()) throw ConfigError("pattern must list at least one sampling variance");
    if (m < 1 || m % groups() != 0) {
      throw ConfigError("m=" + std::to_string(m) + " must be a positive multiple of the pattern size " +
                        std::to_string(groups()));
    }
    if (n_sims < 1) throw ConfigError("n_sims must be >= 1");
    if (beta.empty()) throw ConfigError("beta needs at least the intercept");
    if (alphas.empty()) throw ConfigError("alphas must list at least one nominal level");
    for (double a : alphas) {
      if (!(a > 0.0 && a < 1.0)) throw ConfigError("nominal levels must lie in (0,1)");
    }
    if (methods.empty()) throw ConfigError("methods must list at least one interval method");
    if (!(A >= 0.0)) throw ConfigError("A must be >= 0");
    for (double d : pattern) {
      if (!(d > 0.0)) throw ConfigError("pattern variances must be positive");
    }
    const bool bootstrap = std::any_of(methods.begin(), methods.end(), [](Method x) {
      return x != Method::Direct && x != Method::TradFH && x != Method::TradPR;
    });
    const bool second = uses(Method::DB_FH) || uses(Method::DB_PR);
    if (bootstrap) {
      BootstrapConfig b;
      b.b1 = B1;
      b.b2 = B2;
      b.validate(second);
    }
  }
};

/// Applies a named profile's (n_sims, B1, B2): "desk" = (500, 200, 50),
/// "paper" = (1000, 400, 100).
inline void apply_profile(ScenarioConfig& cfg, const std::string& profile) {
  if (profile == "desk") {
    cfg.n_sims = 500;
    cfg.B1 = 200;
    cfg.B2 = 50;
  } else if (profile == "paper") {
    cfg.n_sims = 1000;
    cfg.B1 = 400;
    cfg.B2 = 100;
  } else {
    throw ConfigError("unknown profile '" + profile + "' (expected desk or paper)");
  }
  cfg.profile = profile;
}

/// Design for a scenario: intercept column, plus p - 1 covariates drawn once
/// from U(-1, 1) on a dedicated substream when beta has more than one entry.
inline Design make_design(const ScenarioConfig& cfg) {
  cfg.validate();
  const int m = cfg.m;
  const auto p = static_cast<Eigen::Index>(cfg.beta.size());
  Vector d(m);
  for (int i = 0; i < m; ++i) d[i] = cfg.pattern[static_cast<std::size_t>(cfg.group_of(i))];
  Matrix x = Matrix::Ones(m, p);
  if (p > 1) {
    Engine eng = StreamKey(cfg.seed).child(0xD5D5D5D5u).engine();
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (Eigen::Index k = 1; k < p; ++k) {
      for (int i = 0; i < m; ++i) x(i, k) = unif(eng);
    }
  }
  return Design(std::move(x), std::move(d));
}

/// One row of the report CSV.
struct ReportRow {
  Method method = Method::Direct;
  double alpha = 0.95;
  int group = 1;
  double coverage_pct = 0.0;
  double avg_length = 0.0;
  int n_sims = 0;
  int m = 0;
  std::string pattern;
  std::string estimator;  ///< "FH", "PR", or "none" for Direct
  std::uint64_t seed = 0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

/// Percentage of truncated variance estimates at each stage.
struct NegativeRate {
  Estimator estimator = Estimator::FH;
  double data_pct = 0.0;
  std::optional<double> first_stage_pct;
  std::optional<double> second_stage_pct;
};

struct ScenarioReport {
  std::vector<ReportRow> rows;
  std::vector<NegativeRate> negatives;
  double wall_seconds = 0.0;
  unsigned workers_used = 1;

  const ReportRow* find(Method method, double alpha, int group) const {
    for (const auto& r : rows) {
      if (r.method == method && std::abs(r.alpha - alpha) < 1e-9 && r.group == group) return &r;
    }
    return nullptr;
  }
  const NegativeRate* negatives_for(Estimator e) const {
    for (const auto& n : negatives) {
      if (n.estimator == e) return &n;
    }
    return nullptr;
  }
};

namespace detail {

/// Everything one replication contributes to the report.
struct ReplicationOutcome {
  std::vector<int> hits;        ///< [method][alpha][group]
  std::vector<double> lengths;  ///< same layout
  std::array<int, 2> data_truncated{};
  std::array<std::size_t, 2> first_truncated{};
  std::array<std::size_t, 2> first_total{};
  std::array<std::size_t, 2> second_truncated{};
  std::array<std::size_t, 2> second_total{};
};

}  // namespace detail

/// Runs the scenario. Replication r draws its population from
/// stream(seed).child(r).child(0) and bootstraps estimator e on
/// stream(seed).child(r).child(1 + e); outcomes are reduced in replication
/// order, so the report does not depend on cfg.workers.
inline ScenarioReport run_scenario(const ScenarioConfig& cfg,
                                   const std::function<void(int)>& progress = {}) {
  const auto start = std::chrono::steady_clock::now();
  const Design design = make_design(cfg);
  const AreaLevelModel model(design, Eigen::Map<const Vector>(cfg.beta.data(), static_cast<Eigen::Index>(cfg.beta.size())),
                             cfg.A, cfg.G);
  const int n_methods = static_cast<int>(cfg.methods.size());
  const int n_alpha = static_cast<int>(cfg.alphas.size());
  const int n_groups = cfg.groups();
  const auto cell = [&](int mi, int ai, int g) {
    return static_cast<std::size_t>((mi * n_alpha + ai) * n_groups + g);
  };
  const std::size_t n_cells = static_cast<std::size_t>(n_methods * n_alpha * n_groups);

  struct EstimatorPlan {
    bool any = false, trad = false, sb = false, hm = false, db = false;
  };
  std::array<EstimatorPlan, 2> plan{};
  for (Method mth : cfg.methods) {
    const auto est = estimator_of(mth);
    if (!est) continue;
    auto& pl = plan[static_cast<std::size_t>(*est)];
    pl.any = true;
    switch (mth) {
      case Method::TradFH: case Method::TradPR: pl.trad = true; break;
      case Method::SB_FH: case Method::SB_PR: pl.sb = true; break;
      case Method::HM_FH: case Method::HM_PR: pl.hm = true; break;
      case Method::DB_FH: case Method::DB_PR: pl.db = true; break;
      default: break;
    }
  }

  std::vector<detail::ReplicationOutcome> outcomes(static_cast<std::size_t>(cfg.n_sims));
  const StreamKey root(cfg.seed);
  const unsigned workers = resolve_workers(cfg.workers);
  std::atomic<int> done{0};

  parallel_for(
      static_cast<std::size_t>(cfg.n_sims), workers, [] { return 0; },
      [&](int&, std::size_t r) {
        const StreamKey rep = root.child(r);
        Engine eng = rep.child(0).engine();
        const PopulationDraw pop = sample_population(model, eng);
        auto& out = outcomes[r];
        out.hits.assign(n_cells, 0);
        out.lengths.assign(n_cells, 0.0);

        auto record = [&](Method mth, int ai, const std::vector<PredictionInterval>& ints) {
          const int mi = static_cast<int>(
              std::find(cfg.methods.begin(), cfg.methods.end(), mth) - cfg.methods.begin());
          for (const auto& pi : ints) {
            const int g = cfg.group_of(static_cast<int>(pi.area_index));
            const std::size_t c = cell(mi, ai, g);
            out.hits[c] += pi.covers(pop.theta[static_cast<Eigen::Index>(pi.area_index)]) ? 1 : 0;
            out.lengths[c] += pi.length();
          }
        };

        if (cfg.uses(Method::Direct)) {
          for (int ai = 0; ai < n_alpha; ++ai) {
            record(Method::Direct, ai, direct_intervals(pop.y, design.d(), cfg.alphas[static_cast<std::size_t>(ai)]));
          }
        }
        for (int e = 0; e < 2; ++e) {
          const auto& pl = plan[static_cast<std::size_t>(e)];
          if (!pl.any) continue;
          const auto est = static_cast<Estimator>(e);
          const FitResult f = fit(design, pop.y, est, cfg.estimation);
          out.data_truncated[static_cast<std::size_t>(e)] = f.was_truncated ? 1 : 0;
          if (pl.trad) {
            const MspeEstimate ms = mspe(f, design);
            for (int ai = 0; ai < n_alpha; ++ai) {
              record(est == Estimator::FH ? Method::TradFH : Method::TradPR, ai,
                     traditional_interval(f, ms, cfg.alphas[static_cast<std::size_t>(ai)]));
            }
          }
          if (!(pl.sb || pl.hm || pl.db)) continue;
          BootstrapConfig bc;
          bc.b1 = cfg.B1;
          bc.b2 = cfg.B2;
          bc.estimator = est;
          bc.seed = cfg.seed;
          bc.estimation = cfg.estimation;
          bc.eblup_star_uses_original_y = cfg.eblup_star_uses_original_y;
          bc.workers = 1;
          const StreamKey bkey = rep.child(1 + static_cast<std::uint64_t>(e));
          const BootstrapDistribution dist = sb_distribution(design, pop.y, f, cfg.G, bc, bkey);
          out.first_truncated[static_cast<std::size_t>(e)] = dist.truncated_count();
          out.first_total[static_cast<std::size_t>(e)] = static_cast<std::size_t>(dist.replicates());
          std::optional<DoubleBootstrapCalibration> cal;
          if (pl.db) {
            cal = db_calibrate(design, dist, cfg.G, bc, bkey);
            out.second_truncated[static_cast<std::size_t>(e)] = cal->second_stage_truncated;
            out.second_total[static_cast<std::size_t>(e)] = cal->second_stage_fits;
          }
          for (int ai = 0; ai < n_alpha; ++ai) {
            const double lvl = cfg.alphas[static_cast<std::size_t>(ai)];
            if (pl.sb) record(detail::single_method(est), ai, sb_interval(dist, f, lvl));
            if (pl.hm) record(detail::synthetic_method(est), ai, hm_interval(dist, f, lvl));
            if (pl.db) record(detail::double_method(est), ai, db_interval(dist, *cal, f, lvl));
          }
        }
        const int finished = ++done;
        if (progress) progress(finished);
      });

  // Ordered reduction.
  std::vector<long long> hits(n_cells, 0);
  std::vector<double> lengths(n_cells, 0.0);
  std::array<long long, 2> data_trunc{};
  std::array<std::size_t, 2> ft{}, fn{}, st{}, sn{};
  for (const auto& o : outcomes) {
    for (std::size_t c = 0; c < n_cells; ++c) {
      hits[c] += o.hits[c];
      lengths[c] += o.lengths[c];
    }
    for (std::size_t e = 0; e < 2; ++e) {
      data_trunc[e] += o.data_truncated[e];
      ft[e] += o.first_truncated[e];
      fn[e] += o.first_total[e];
      st[e] += o.second_truncated[e];
      sn[e] += o.second_total[e];
    }
  }

  ScenarioReport rep;
  const double per_cell = static_cast<double>(cfg.n_sims) * cfg.group_size();
  for (int mi = 0; mi < n_methods; ++mi) {
    const Method mth = cfg.methods[static_cast<std::size_t>(mi)];
    const auto est = estimator_of(mth);
    for (int ai = 0; ai < n_alpha; ++ai) {
      for (int g = 0; g < n_groups; ++g) {
        const std::size_t c = cell(mi, ai, g);
        ReportRow row;
        row.method = mth;
        row.alpha = cfg.alphas[static_cast<std::size_t>(ai)];
        row.group = g + 1;
        row.coverage_pct = 100.0 * static_cast<double>(hits[c]) / per_cell;
        row.avg_length = lengths[c] / per_cell;
        row.n_sims = cfg.n_sims;
        row.m = cfg.m;
        row.pattern = cfg.pattern_name;
        row.estimator = est ? std::string(to_string(*est)) : std::string("none");
        row.seed = cfg.seed;
        rep.rows.push_back(std::move(row));
      }
    }
  }
  for (std::size_t e = 0; e < 2; ++e) {
    if (!plan[e].any) continue;
    NegativeRate nr;
    nr.estimator = static_cast<Estimator>(e);
    nr.data_pct = 100.0 * static_cast<double>(data_trunc[e]) / cfg.n_sims;
    if (fn[e] > 0) nr.first_stage_pct = 100.0 * static_cast<double>(ft[e]) / static_cast<double>(fn[e]);
    if (sn[e] > 0) nr.second_stage_pct = 100.0 * static_cast<double>(st[e]) / static_cast<double>(sn[e]);
    rep.negatives.push_back(nr);
  }
  rep.workers_used = workers;
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Comparison against reference tables.

struct ReferenceCell {
  Method method = Method::Direct;
  double alpha = 0.95;
  int group = 1;
  double coverage_pct = 0.0;
  std::optional<double> avg_length;
};

struct ReferenceNegative {
  Estimator estimator = Estimator::FH;
  std::string stage;  ///< "data", "first", or "second"
  double pct = 0.0;
};

struct Tolerances {
  double coverage_abs = 2.5;  ///< percentage points
  double length_rel = 0.10;   ///< fraction of the reference length
  double negative_abs = 3.0;  ///< percentage points
};

struct CellCheck {
  std::string key;
  std::string quantity;
  double expected = 0.0;
  double actual = 0.0;
  double tolerance = 0.0;  ///< absolute allowance for |actual - expected|
  bool pass = false;
};

struct ComparisonResult {
  std::vector<CellCheck> cells;
  std::size_t skipped = 0;  ///< reference cells whose method is absent from the report

  bool all_pass() const {
    return !cells.empty() &&
           std::all_of(cells.begin(), cells.end(), [](const CellCheck& c) { return c.pass; });
  }
  std::size_t failures() const {
    return static_cast<std::size_t>(
        std::count_if(cells.begin(), cells.end(), [](const CellCheck& c) { return !c.pass; }));
  }
};

inline std::string cell_key(Method m, double alpha, int group) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s@%g/G%d", std::string(to_string(m)).c_str(), alpha * 100.0, group);
  return buf;
}

/// Checks every reference cell whose method appears in the report. A method
/// that is present but lacks the (alpha, group) cell is a schema error, and so
/// is a reference that shares no method with the report.
inline ComparisonResult compare_reports(const std::vector<ReportRow>& report,
                                        const std::vector<ReferenceCell>& reference,
                                        const Tolerances& tol = {}) {
  ComparisonResult res;
  for (const auto& ref : reference) {
    const bool method_present = std::any_of(report.begin(), report.end(),
                                            [&](const ReportRow& r) { return r.method == ref.method; });
    if (!method_present) {
      ++res.skipped;
      continue;
    }
    const auto it = std::find_if(report.begin(), report.end(), [&](const ReportRow& r) {
      return r.method == ref.method && std::abs(r.alpha - ref.alpha) < 1e-9 && r.group == ref.group;
    });
    const std::string key = cell_key(ref.method, ref.alpha, ref.group);
    if (it == report.end()) throw SchemaError("report has no cell " + key);
    CellCheck cov{key, "coverage_pct", ref.coverage_pct, it->coverage_pct, tol.coverage_abs, false};
    cov.pass = std::abs(cov.actual - cov.expected) <= cov.tolerance;
    res.cells.push_back(cov);
    if (ref.avg_length) {
      CellCheck len{key, "avg_length", *ref.avg_length, it->avg_length,
                    tol.length_rel * *ref.avg_length, false};
      len.pass = std::abs(len.actual - len.expected) <= len.tolerance;
      res.cells.push_back(len);
    }
  }
  if (res.cells.empty()) throw SchemaError("reference shares no method with the report");
  return res;
}

inline ComparisonResult compare_negatives(const std::vector<NegativeRate>& report,
                                          const std::vector<ReferenceNegative>& reference,
                                          const Tolerances& tol = {}) {
  ComparisonResult res;
  for (const auto& ref : reference) {
    const auto it = std::find_if(report.begin(), report.end(),
                                 [&](const NegativeRate& n) { return n.estimator == ref.estimator; });
    if (it == report.end()) {
      ++res.skipped;
      continue;
    }
    std::optional<double> actual;
    if (ref.stage == "data") actual = it->data_pct;
    else if (ref.stage == "first") actual = it->first_stage_pct;
    else if (ref.stage == "second") actual = it->second_stage_pct;
    else throw SchemaError("unknown stage '" + ref.stage + "'");
    if (!actual) {
      ++res.skipped;
      continue;
    }
    CellCheck c{std::string(to_string(ref.estimator)) + "/" + ref.stage, "pct_negative", ref.pct,
                *actual, tol.negative_abs, false};
    c.pass = std::abs(c.actual - c.expected) <= c.tolerance;
    res.cells.push_back(c);
  }
  if (res.cells.empty()) throw SchemaError("reference shares no estimator/stage with the report");
  return res;
}

}  // namespace sae
