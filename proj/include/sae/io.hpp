#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "json.hpp"
#include "sae/errors.hpp"
#include "sae/harness.hpp"
#include "sae/intervals.hpp"
#include "sae/model.hpp"

namespace sae {

/// Config keys that do not match a ScenarioConfig field.
class UnknownKeysError : public ConfigError {
 public:
  explicit UnknownKeysError(std::vector<std::string> keys)
      : ConfigError("unknown config keys: " + join(keys)), keys_(std::move(keys)) {}
  const std::vector<std::string>& keys() const noexcept { return keys_; }

 private:
  static std::string join(const std::vector<std::string>& keys) {
    std::string s;
    for (const auto& k : keys) s += (s.empty() ? "" : ", ") + k;
    return s;
  }
  std::vector<std::string> keys_;
};

// ---------------------------------------------------------------------------
// Low-level CSV helpers. Fields never contain commas or quotes in these
// schemas, so a plain split is sufficient.

/// Shortest decimal string that reads back to the same double.
inline std::string format_real(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    std::string_view field = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) field.remove_suffix(1);
    out.emplace_back(field);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline double parse_real(const std::string& s, std::size_t line, std::string_view column) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != end) {
    throw ParseError("column '" + std::string(column) + "': cannot parse '" + s + "' as a number", line);
  }
  return v;
}

template <class Int>
Int parse_integer(const std::string& s, std::size_t line, std::string_view column) {
  Int v{};
  const char* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != end) {
    throw ParseError("column '" + std::string(column) + "': cannot parse '" + s + "' as an integer", line);
  }
  return v;
}

namespace detail {

/// Reads non-blank lines, tracking 1-based line numbers.
class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}
  bool next(std::string& line) {
    while (std::getline(in_, line)) {
      ++number_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") != std::string::npos) return true;
    }
    return false;
  }
  std::size_t number() const { return number_; }

 private:
  std::istream& in_;
  std::size_t number_ = 0;
};

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return in;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Area data.

struct AreaDataset {
  std::vector<std::string> area_id;
  Vector y;
  Vector d;
  Matrix x;

  Eigen::Index m() const { return y.size(); }
  Eigen::Index p() const { return x.cols(); }
  Design design() const { return Design(x, d); }
};

/// Header must be exactly area_id,y,D,x1[,x2,...].
inline AreaDataset read_area_dataset(std::istream& in) {
  detail::LineReader lr(in);
  std::string line;
  if (!lr.next(line)) throw ParseError("empty dataset", 1);
  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "area_id" || header[1] != "y" || header[2] != "D") {
    throw ParseError("header must be area_id,y,D,x1[,x2,...]", lr.number());
  }
  for (std::size_t k = 3; k < header.size(); ++k) {
    if (header[k] != "x" + std::to_string(k - 2)) {
      throw ParseError("expected column 'x" + std::to_string(k - 2) + "', found '" + header[k] + "'",
                       lr.number());
    }
  }
  const std::size_t p = header.size() - 3;
  std::vector<std::string> ids;
  std::vector<double> ys, ds, xs;
  std::set<std::string> seen;
  while (lr.next(line)) {
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(f.size()), lr.number());
    }
    if (f[0].empty()) throw ParseError("empty area_id", lr.number());
    if (!seen.insert(f[0]).second) throw ParseError("duplicate area_id '" + f[0] + "'", lr.number());
    ids.push_back(f[0]);
    ys.push_back(parse_real(f[1], lr.number(), "y"));
    const double d = parse_real(f[2], lr.number(), "D");
    if (!(d > 0.0) || !std::isfinite(d)) throw ParseError("D must be positive and finite", lr.number());
    ds.push_back(d);
    for (std::size_t k = 0; k < p; ++k) xs.push_back(parse_real(f[3 + k], lr.number(), header[3 + k]));
  }
  const auto m = static_cast<Eigen::Index>(ids.size());
  if (m <= static_cast<Eigen::Index>(p)) {
    throw ParseError("need more areas than covariates (m=" + std::to_string(m) + ", p=" +
                         std::to_string(p) + ")", lr.number());
  }
  AreaDataset out;
  out.area_id = std::move(ids);
  out.y = Eigen::Map<Vector>(ys.data(), m);
  out.d = Eigen::Map<Vector>(ds.data(), m);
  out.x.resize(m, static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(p); ++k) {
      out.x(i, k) = xs[static_cast<std::size_t>(i) * p + static_cast<std::size_t>(k)];
    }
  }
  return out;
}

inline AreaDataset read_area_dataset(const std::string& path) {
  auto in = detail::open_input(path);
  return read_area_dataset(in);
}

inline void write_area_dataset(std::ostream& out, const AreaDataset& data) {
  out << "area_id,y,D";
  for (Eigen::Index k = 0; k < data.p(); ++k) out << ",x" << k + 1;
  out << '\n';
  for (Eigen::Index i = 0; i < data.m(); ++i) {
    out << data.area_id[static_cast<std::size_t>(i)] << ',' << format_real(data.y[i]) << ','
        << format_real(data.d[i]);
    for (Eigen::Index k = 0; k < data.p(); ++k) out << ',' << format_real(data.x(i, k));
    out << '\n';
  }
}

/// One row per area: area_id,theta_hat,g1_hat,lower,upper,method,alpha.
/// For Direct, theta_hat is y and g1_hat is D.
inline void write_intervals_csv(std::ostream& out, const AreaDataset& data,
                                const Vector& theta_hat, const Vector& g1_hat,
                                const std::vector<PredictionInterval>& intervals) {
  out << "area_id,theta_hat,g1_hat,lower,upper,method,alpha\n";
  for (const auto& pi : intervals) {
    const auto i = static_cast<Eigen::Index>(pi.area_index);
    out << data.area_id[pi.area_index] << ',' << format_real(theta_hat[i]) << ','
        << format_real(g1_hat[i]) << ',' << format_real(pi.lower) << ',' << format_real(pi.upper)
        << ',' << table_label(pi.method) << ',' << format_real(pi.nominal) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Scenario reports.

inline constexpr std::string_view kReportHeader =
    "method,alpha,group,coverage_pct,avg_length,n_sims,m,pattern,estimator,seed";

inline void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
  out << kReportHeader << '\n';
  for (const auto& r : rows) {
    out << table_label(r.method) << ',' << format_real(r.alpha) << ",G" << r.group << ','
        << format_real(r.coverage_pct) << ',' << format_real(r.avg_length) << ',' << r.n_sims << ','
        << r.m << ',' << r.pattern << ',' << r.estimator << ',' << r.seed << '\n';
  }
}

inline int parse_group(const std::string& s, std::size_t line) {
  std::string digits = s;
  if (!digits.empty() && (digits[0] == 'G' || digits[0] == 'g')) digits.erase(0, 1);
  const int g = parse_integer<int>(digits, line, "group");
  if (g < 1) throw ParseError("group must be >= 1", line);
  return g;
}

inline std::vector<ReportRow> read_report_csv(std::istream& in) {
  detail::LineReader lr(in);
  std::string line;
  if (!lr.next(line) || line != kReportHeader) {
    throw SchemaError("report header must be " + std::string(kReportHeader));
  }
  std::vector<ReportRow> rows;
  while (lr.next(line)) {
    const auto f = split_csv_line(line);
    if (f.size() != 10) throw ParseError("expected 10 fields, found " + std::to_string(f.size()), lr.number());
    ReportRow r;
    try {
      r.method = parse_method(f[0]);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), lr.number());
    }
    r.alpha = parse_real(f[1], lr.number(), "alpha");
    r.group = parse_group(f[2], lr.number());
    r.coverage_pct = parse_real(f[3], lr.number(), "coverage_pct");
    r.avg_length = parse_real(f[4], lr.number(), "avg_length");
    r.n_sims = parse_integer<int>(f[5], lr.number(), "n_sims");
    r.m = parse_integer<int>(f[6], lr.number(), "m");
    r.pattern = f[7];
    r.estimator = f[8];
    r.seed = parse_integer<std::uint64_t>(f[9], lr.number(), "seed");
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<ReportRow> read_report_csv(const std::string& path) {
  auto in = detail::open_input(path);
  return read_report_csv(in);
}

inline void write_negatives_csv(std::ostream& out, const std::vector<NegativeRate>& rates) {
  out << "estimator,stage,pct_negative\n";
  for (const auto& n : rates) {
    const std::string e(to_string(n.estimator));
    out << e << ",data," << format_real(n.data_pct) << '\n';
    if (n.first_stage_pct) out << e << ",first," << format_real(*n.first_stage_pct) << '\n';
    if (n.second_stage_pct) out << e << ",second," << format_real(*n.second_stage_pct) << '\n';
  }
}

/// Alpha may be given as a level (0.95) or a percentage (95).
inline double parse_level(const std::string& s, std::size_t line) {
  const double a = parse_real(s, line, "alpha");
  const double level = a > 1.0 ? a / 100.0 : a;
  if (!(level > 0.0 && level < 1.0)) throw ParseError("alpha must be a level in (0,1) or (0,100)", line);
  return level;
}

inline Estimator parse_estimator(std::string_view s) {
  if (s == "FH" || s == "fh") return Estimator::FH;
  if (s == "PR" || s == "pr") return Estimator::PR;
  throw ConfigError("unknown estimator '" + std::string(s) + "' (expected FH or PR)");
}

/// Coverage reference: method,alpha,group,coverage_pct,avg_length
/// (avg_length may be empty).
inline std::vector<ReferenceCell> read_reference_cells(std::istream& in) {
  detail::LineReader lr(in);
  std::string line;
  if (!lr.next(line) || line != "method,alpha,group,coverage_pct,avg_length") {
    throw SchemaError("reference header must be method,alpha,group,coverage_pct,avg_length");
  }
  std::vector<ReferenceCell> out;
  while (lr.next(line)) {
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw ParseError("expected 5 fields", lr.number());
    ReferenceCell c;
    try {
      c.method = parse_method(f[0]);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), lr.number());
    }
    c.alpha = parse_level(f[1], lr.number());
    c.group = parse_group(f[2], lr.number());
    c.coverage_pct = parse_real(f[3], lr.number(), "coverage_pct");
    if (!f[4].empty()) c.avg_length = parse_real(f[4], lr.number(), "avg_length");
    out.push_back(c);
  }
  return out;
}

/// Negative-rate reference: estimator,stage,pct_negative.
inline std::vector<ReferenceNegative> read_reference_negatives(std::istream& in) {
  detail::LineReader lr(in);
  std::string line;
  if (!lr.next(line) || line != "estimator,stage,pct_negative") {
    throw SchemaError("reference header must be estimator,stage,pct_negative");
  }
  std::vector<ReferenceNegative> out;
  while (lr.next(line)) {
    const auto f = split_csv_line(line);
    if (f.size() != 3) throw ParseError("expected 3 fields", lr.number());
    ReferenceNegative n;
    try {
      n.estimator = parse_estimator(f[0]);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), lr.number());
    }
    if (f[1] != "data" && f[1] != "first" && f[1] != "second") {
      throw ParseError("stage must be data, first or second", lr.number());
    }
    n.stage = f[1];
    n.pct = parse_real(f[2], lr.number(), "pct_negative");
    out.push_back(n);
  }
  return out;
}

/// First line of a reference file decides its kind.
inline bool is_negatives_reference(const std::string& path) {
  auto in = detail::open_input(path);
  std::string first;
  std::getline(in, first);
  return first.rfind("estimator,", 0) == 0;
}

// ---------------------------------------------------------------------------
// Scenario configuration (flat JSON object).

inline const std::set<std::string>& scenario_keys() {
  static const std::set<std::string> keys = {
      "m",       "pattern", "A",       "G",     "beta",    "n_sims", "B1",
      "B2",      "alphas",  "methods", "seed",  "workers", "profile", "floor",
      "eblup_star_uses_original_y"};
  return keys;
}

struct ParsedConfig {
  ScenarioConfig config;
  bool seed_defaulted = true;
};

/// Unknown keys raise UnknownKeysError; profile (if given) is applied before
/// explicit n_sims / B1 / B2. Alphas may be levels or percentages.
inline ParsedConfig parse_scenario_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::vector<std::string> unknown;
  for (const auto& [k, v] : j.items()) {
    if (!scenario_keys().count(k)) unknown.push_back(k);
  }
  if (!unknown.empty()) throw UnknownKeysError(std::move(unknown));

  ParsedConfig out;
  ScenarioConfig& c = out.config;
  try {
    if (j.contains("profile")) apply_profile(c, j.at("profile").get<std::string>());
    if (j.contains("m")) c.m = j.at("m").get<int>();
    if (j.contains("pattern")) {
      const auto& p = j.at("pattern");
      if (p.is_string()) {
        const auto name = p.get<std::string>();
        if (name == "P1" || name == "i") {
          c.pattern = kPatternOne;
          c.pattern_name = "P1";
        } else if (name == "P2" || name == "ii") {
          c.pattern = kPatternTwo;
          c.pattern_name = "P2";
        } else {
          throw ConfigError("unknown pattern '" + name + "' (expected P1, P2 or a list)");
        }
      } else {
        c.pattern = p.get<std::vector<double>>();
        c.pattern_name = "custom";
      }
    }
    if (j.contains("A")) c.A = j.at("A").get<double>();
    if (j.contains("G")) c.G = LinkingDistribution::parse(j.at("G").get<std::string>());
    if (j.contains("beta")) c.beta = j.at("beta").get<std::vector<double>>();
    if (j.contains("n_sims")) c.n_sims = j.at("n_sims").get<int>();
    if (j.contains("B1")) c.B1 = j.at("B1").get<int>();
    if (j.contains("B2")) c.B2 = j.at("B2").get<int>();
    if (j.contains("alphas")) {
      c.alphas.clear();
      for (double a : j.at("alphas").get<std::vector<double>>()) c.alphas.push_back(a > 1.0 ? a / 100.0 : a);
    }
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& s : j.at("methods").get<std::vector<std::string>>()) c.methods.push_back(parse_method(s));
    }
    if (j.contains("seed")) {
      c.seed = j.at("seed").get<std::uint64_t>();
      out.seed_defaulted = false;
    }
    if (j.contains("workers")) c.workers = j.at("workers").get<unsigned>();
    if (j.contains("floor")) c.estimation.floor = j.at("floor").get<double>();
    if (j.contains("eblup_star_uses_original_y")) {
      c.eblup_star_uses_original_y = j.at("eblup_star_uses_original_y").get<bool>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config has a value of the wrong type: ") + e.what());
  }
  c.validate();
  return out;
}

inline ParsedConfig read_scenario_config(const std::string& path) {
  auto in = detail::open_input(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario_config(ss.str());
}

/// Run metadata written next to report.csv.
inline nlohmann::json make_manifest(const ParsedConfig& parsed, const ScenarioReport& report) {
  const ScenarioConfig& c = parsed.config;
  nlohmann::json methods = nlohmann::json::array();
  for (Method mth : c.methods) methods.push_back(std::string(table_label(mth)));
  nlohmann::json j;
  j["seed"] = c.seed;
  j["seed_defaulted"] = parsed.seed_defaulted;
  j["profile"] = c.profile;
  j["m"] = c.m;
  j["pattern"] = c.pattern_name;
  j["pattern_values"] = c.pattern;
  j["A"] = c.A;
  j["G"] = c.G.name();
  j["beta"] = c.beta;
  j["n_sims"] = c.n_sims;
  j["B1"] = c.B1;
  j["B2"] = c.B2;
  j["alphas"] = c.alphas;
  j["methods"] = methods;
  j["floor"] = c.estimation.floor;
  j["eblup_star_uses_original_y"] = c.eblup_star_uses_original_y;
  j["workers"] = report.workers_used;
  j["wall_seconds"] = report.wall_seconds;
  return j;
}

// ---------------------------------------------------------------------------
// Text rendering in the "coverage (average length)" layout: one line per
// (alpha, group), one column per method.

inline std::string render_report_table(const std::vector<ReportRow>& rows, bool markdown) {
  std::vector<Method> methods;
  std::vector<double> alphas;
  int groups = 0;
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    if (std::none_of(alphas.begin(), alphas.end(), [&](double a) { return std::abs(a - r.alpha) < 1e-12; })) {
      alphas.push_back(r.alpha);
    }
    groups = std::max(groups, r.group);
  }
  auto cell_text = [&](Method mth, double a, int g) -> std::string {
    for (const auto& r : rows) {
      if (r.method == mth && std::abs(r.alpha - a) < 1e-12 && r.group == g) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.2f (%.2f)", r.coverage_pct, r.avg_length);
        return buf;
      }
    }
    return "-";
  };
  std::vector<std::vector<std::string>> table;
  std::vector<std::string> head = {"alpha", "group"};
  for (Method mth : methods) head.emplace_back(table_label(mth));
  table.push_back(head);
  for (double a : alphas) {
    for (int g = 1; g <= groups; ++g) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%g", a * 100.0);
      std::vector<std::string> line = {buf, "G" + std::to_string(g)};
      for (Method mth : methods) line.push_back(cell_text(mth, a, g));
      table.push_back(std::move(line));
    }
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& line : table) {
    for (std::size_t k = 0; k < line.size(); ++k) width[k] = std::max(width[k], line[k].size());
  }
  std::ostringstream os;
  for (std::size_t r = 0; r < table.size(); ++r) {
    if (markdown) os << "| ";
    for (std::size_t k = 0; k < table[r].size(); ++k) {
      os << std::setw(static_cast<int>(width[k])) << table[r][k];
      if (k + 1 < table[r].size()) os << (markdown ? " | " : "  ");
    }
    if (markdown) os << " |";
    os << '\n';
    if (markdown && r == 0) {
      os << '|';
      for (std::size_t k = 0; k < width.size(); ++k) os << std::string(width[k] + 2, '-') << '|';
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace sae
