// sae: prediction intervals for area-level models.
//
// Exit codes: 0 ok, 1 usage / IO / parse failure, 2 singular design,
// 3 invalid configuration (including unknown config keys), 4 t family with
// dof <= 4 in pivot-check, 5 reference check failed.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sae/sae.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kSingular = 2, kConfig = 3, kPivotDomain = 4, kCheckFailed = 5 };

unsigned workers_from_env(unsigned fallback) {
  if (const char* env = std::getenv("SAE_WORKERS")) {
    try {
      return static_cast<unsigned>(std::stoul(env));
    } catch (const std::exception&) {
      throw sae::ConfigError(std::string("SAE_WORKERS is not a count: '") + env + "'");
    }
  }
  return fallback;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

// Accepts "SB" with --estimator, or a full name such as SB.FH.
sae::Method resolve_method(const std::string& method, const std::string& estimator) {
  const std::string est = estimator == "PR" || estimator == "pr" ? "PR" : "FH";
  if (method == "Direct" || method == "DIRECT" || method == "direct") return sae::Method::Direct;
  if (method == "Trad" || method == "trad") return sae::parse_method(est);
  if (method == "SB" || method == "HM" || method == "DB") return sae::parse_method(method + "." + est);
  return sae::parse_method(method);
}

// ---------------------------------------------------------------------------

struct EstimateArgs {
  std::string data;
  std::string estimator = "FH";
  std::string method = "SB";
  double alpha = 0.95;
  int b1 = 400;
  int b2 = 100;
  std::uint64_t seed = 0;
  std::string linking = "normal";  ///< family used to resample u
  std::string out;
  bool to_stdout = false;
  unsigned workers = 1;
};

int cmd_estimate(const EstimateArgs& a) {
  const sae::AreaDataset data = sae::read_area_dataset(a.data);
  const sae::Design design = data.design();
  const sae::Method method = resolve_method(a.method, a.estimator);
  const sae::LinkingDistribution g = sae::LinkingDistribution::parse(a.linking);
  const double level = a.alpha > 1.0 ? a.alpha / 100.0 : a.alpha;
  if (!(level > 0.0 && level < 1.0)) throw sae::ConfigError("--alpha must lie in (0,1) or (0,100)");

  std::vector<sae::PredictionInterval> intervals;
  sae::Vector theta_hat = data.y;
  sae::Vector g1_hat = data.d;
  if (method == sae::Method::Direct) {
    intervals = sae::direct_intervals(data.y, data.d, level);
  } else {
    const sae::Estimator est = *sae::estimator_of(method);
    const sae::FitResult f = sae::fit(design, data.y, est);
    theta_hat = f.eblup;
    g1_hat = f.g1_hat;
    std::cerr << "estimator=" << sae::to_string(est) << " A_hat=" << sae::format_real(f.A_hat)
              << " A_raw=" << sae::format_real(f.A_raw) << " truncated=" << (f.was_truncated ? 1 : 0);
    if (est == sae::Estimator::FH) {
      std::cerr << " f(A_hat)=" << sae::format_real(sae::fh_objective(f.A_hat, design.x(), data.y, design.d()));
    }
    std::cerr << '\n';
    sae::BootstrapConfig bc;
    bc.b1 = a.b1;
    bc.b2 = a.b2;
    bc.estimator = est;
    bc.seed = a.seed;
    bc.workers = workers_from_env(a.workers);
    const sae::StreamKey key(a.seed);
    switch (method) {
      case sae::Method::TradFH:
      case sae::Method::TradPR:
        intervals = sae::traditional_interval(f, sae::mspe(f, design), level);
        break;
      case sae::Method::SB_FH:
      case sae::Method::SB_PR:
      case sae::Method::HM_FH:
      case sae::Method::HM_PR: {
        bc.validate(false);
        const auto dist = sae::sb_distribution(design, data.y, f, g, bc, key);
        intervals = method == sae::Method::SB_FH || method == sae::Method::SB_PR
                        ? sae::sb_interval(dist, f, level)
                        : sae::hm_interval(dist, f, level);
        break;
      }
      default: {
        bc.validate(true);
        const auto dist = sae::sb_distribution(design, data.y, f, g, bc, key);
        const auto cal = sae::db_calibrate(design, dist, g, bc, key);
        intervals = sae::db_interval(dist, cal, f, level);
        break;
      }
    }
  }
  std::ostringstream os;
  sae::write_intervals_csv(os, data, theta_hat, g1_hat, intervals);
  if (a.to_stdout || a.out.empty()) {
    std::cout << os.str();
  }
  if (!a.out.empty()) write_text(a.out, os.str());
  return kOk;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::string out_dir = ".";
  std::vector<std::string> checks;
  double coverage_tol = 2.5;
  double length_rtol = 0.10;
  double negative_tol = 3.0;
  bool quiet = false;
};

int print_check(const std::string& name, const sae::ComparisonResult& res) {
  for (const auto& c : res.cells) {
    std::cerr << (c.pass ? "  ok   " : "  FAIL ") << c.key << ' ' << c.quantity << " expected "
              << c.expected << " got " << c.actual << " (tol " << c.tolerance << ")\n";
  }
  std::cerr << name << ": " << res.cells.size() - res.failures() << '/' << res.cells.size()
            << " cells within tolerance";
  if (res.skipped) std::cerr << ", " << res.skipped << " skipped (method not run)";
  std::cerr << '\n';
  return res.all_pass() ? kOk : kCheckFailed;
}

int cmd_simulate(const SimulateArgs& a) {
  sae::ParsedConfig parsed = sae::read_scenario_config(a.config);
  parsed.config.workers = workers_from_env(parsed.config.workers);
  std::function<void(int)> progress;
  if (!a.quiet) {
    const int total = parsed.config.n_sims;
    const int step = std::max(1, total / 20);
    progress = [total, step](int done) {
      if (done % step == 0 || done == total) std::cerr << "\rreplications " << done << '/' << total << std::flush;
    };
  }
  const sae::ScenarioReport report = sae::run_scenario(parsed.config, progress);
  if (!a.quiet) std::cerr << '\n';

  const std::filesystem::path dir(a.out_dir);
  std::filesystem::create_directories(dir);
  std::ostringstream rep, neg;
  sae::write_report_csv(rep, report.rows);
  sae::write_negatives_csv(neg, report.negatives);
  write_text(dir / "report.csv", rep.str());
  write_text(dir / "negatives.csv", neg.str());
  write_text(dir / "manifest.json", sae::make_manifest(parsed, report).dump(2) + "\n");
  std::cerr << "wrote " << (dir / "report.csv").string() << " in " << report.wall_seconds << " s\n";

  const sae::Tolerances tol{a.coverage_tol, a.length_rtol, a.negative_tol};
  int status = kOk;
  for (const auto& ref : a.checks) {
    std::ifstream in(ref);
    if (!in) throw std::runtime_error("cannot open '" + ref + "'");
    const auto res = sae::is_negatives_reference(ref)
                         ? sae::compare_negatives(report.negatives, sae::read_reference_negatives(in), tol)
                         : sae::compare_reports(report.rows, sae::read_reference_cells(in), tol);
    if (print_check(ref, res) != kOk) status = kCheckFailed;
  }
  return status;
}

// ---------------------------------------------------------------------------

struct PivotArgs {
  std::string family = "normal";
  double phi = 0.0;
  std::vector<double> d_values = {1.0};
  std::vector<double> a_grid = {0.5, 1.0, 2.0};
  std::string csv;
};

sae::LinkingDistribution pivot_family(const PivotArgs& a) {
  if (a.family == "t" || a.family == "student_t") {
    if (!(a.phi > 4.0)) throw sae::DomainError("t family needs --phi > 4 for a finite fourth moment");
    return sae::LinkingDistribution::student_t(a.phi);
  }
  return sae::LinkingDistribution::parse(a.family);
}

int cmd_pivot_check(const PivotArgs& a) {
  const auto g = pivot_family(a);
  const auto rep = sae::pivot_scan(g, a.d_values, a.a_grid);
  std::cout << "family " << g.name() << "\n";
  std::cout << "fourth moment of the standardized prediction error\n";
  std::cout << std::setw(10) << "D \\ A";
  for (double v : rep.a_grid) std::cout << std::setw(12) << v;
  std::cout << '\n';
  for (std::size_t j = 0; j < rep.d_values.size(); ++j) {
    std::cout << std::setw(10) << rep.d_values[j];
    for (double v : rep.fourth[j]) std::cout << std::setw(12) << std::fixed << std::setprecision(6) << v;
    std::cout << std::defaultfloat << '\n';
  }
  std::cout << "claim " << sae::to_string(rep.claim) << " (max spread " << rep.max_spread << ")\n";
  if (!a.csv.empty()) {
    std::ostringstream os;
    os << "D,A,fourth_moment,third_moment\n";
    for (std::size_t j = 0; j < rep.d_values.size(); ++j) {
      for (std::size_t k = 0; k < rep.a_grid.size(); ++k) {
        os << sae::format_real(rep.d_values[j]) << ',' << sae::format_real(rep.a_grid[k]) << ','
           << sae::format_real(rep.fourth[j][k]) << ',' << sae::format_real(rep.third[j][k]) << '\n';
      }
    }
    write_text(a.csv, os.str());
  }
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_report(const std::string& path, bool markdown) {
  std::cout << sae::render_report_table(sae::read_report_csv(path), markdown);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prediction intervals for small-area means under area-level models"};
  app.require_subcommand(1);

  EstimateArgs est;
  auto* estimate = app.add_subcommand("estimate", "Intervals for every area of a dataset");
  estimate->add_option("--data", est.data, "CSV with header area_id,y,D,x1[,x2,...]")->required();
  estimate->add_option("--estimator", est.estimator, "FH or PR")->check(CLI::IsMember({"FH", "PR", "fh", "pr"}));
  estimate->add_option("--method", est.method, "Direct, Trad, SB, HM, DB or a full name such as SB.FH");
  estimate->add_option("--alpha", est.alpha, "Nominal coverage, 0.95 or 95");
  estimate->add_option("--linking", est.linking, "Linking family used for resampling: normal, t:9, se, logistic");
  estimate->add_option("--B1", est.b1, "First-stage replicates");
  estimate->add_option("--B2", est.b2, "Second-stage replicates per first-stage replicate");
  estimate->add_option("--seed", est.seed, "Random seed");
  estimate->add_option("--workers", est.workers, "Threads (0 = all); SAE_WORKERS overrides");
  estimate->add_option("--out", est.out, "Output CSV path");
  estimate->add_flag("--stdout", est.to_stdout, "Also write the CSV to stdout");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run a Monte Carlo scenario");
  simulate->add_option("--config", sim.config, "Scenario JSON")->required();
  simulate->add_option("--out", sim.out_dir, "Output directory for report.csv and manifest.json");
  simulate->add_option("--check", sim.checks, "Reference CSV(s) to compare against");
  simulate->add_option("--coverage-tol", sim.coverage_tol, "Allowed coverage difference in points");
  simulate->add_option("--length-rtol", sim.length_rtol, "Allowed relative length difference");
  simulate->add_option("--negative-tol", sim.negative_tol, "Allowed difference in negative-estimate rates");
  simulate->add_flag("--quiet", sim.quiet, "No progress output");

  PivotArgs piv;
  auto* pivot = app.add_subcommand("pivot-check", "Moment-based pivot diagnostic");
  pivot->add_option("--family", piv.family, "normal, t, se or logistic");
  pivot->add_option("--phi", piv.phi, "Degrees of freedom for the t family");
  pivot->add_option("--D", piv.d_values, "Sampling variance(s)")->delimiter(',');
  pivot->add_option("--A", piv.a_grid, "Grid of A values")->delimiter(',');
  pivot->add_option("--csv", piv.csv, "Also write the grid to this CSV");

  std::string report_path;
  bool markdown = false;
  auto* report = app.add_subcommand("report", "Print a report CSV as a coverage (length) table");
  report->add_option("report", report_path, "report.csv")->required();
  report->add_flag("--markdown", markdown, "Markdown table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (estimate->parsed()) return cmd_estimate(est);
    if (simulate->parsed()) return cmd_simulate(sim);
    if (pivot->parsed()) return cmd_pivot_check(piv);
    if (report->parsed()) return cmd_report(report_path, markdown);
  } catch (const sae::DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pivot->parsed() ? kPivotDomain : kConfig;
  } catch (const sae::SingularDesignError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSingular;
  } catch (const sae::UnknownKeysError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const sae::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (pivot->parsed() && std::string(e.what()).find("degrees of freedom") != std::string::npos) {
      return kPivotDomain;
    }
    return kConfig;
  } catch (const sae::SchemaError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
