#include <gtest/gtest.h>

#include <limits>
#include <random>
#include <sstream>

#include "sae/errors.hpp"
#include "sae/harness.hpp"
#include "sae/io.hpp"

using sae::Method;

TEST(Csv, RealFormattingRoundTrips) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 10000; ++i) {
    const double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
    const std::string s = sae::format_real(v);
    EXPECT_EQ(sae::parse_real(s, 1, "v"), v) << s;
  }
  EXPECT_EQ(sae::format_real(0.95), "0.95");
  EXPECT_EQ(sae::format_real(100.0), "100");
}

TEST(Csv, SplitTrimsWhitespace) {
  const auto f = sae::split_csv_line(" a , 1.5,\tx \r");
  ASSERT_EQ(f.size(), 3u);
  EXPECT_EQ(f[0], "a");
  EXPECT_EQ(f[1], "1.5");
  EXPECT_EQ(f[2], "x");
}

TEST(Dataset, ReadsValidFile) {
  std::istringstream in("area_id,y,D,x1,x2\nA,1.0,0.5,1,0.3\nB,2.0,1.5,1,-0.2\nC,0.5,2,1,0.9\n");
  const auto ds = sae::read_area_dataset(in);
  EXPECT_EQ(ds.m(), 3);
  EXPECT_EQ(ds.p(), 2);
  EXPECT_EQ(ds.area_id[1], "B");
  EXPECT_EQ(ds.d[2], 2.0);
  EXPECT_EQ(ds.x(2, 1), 0.9);
}

TEST(Dataset, ErrorsCarryLineNumbers) {
  auto line_of = [](const std::string& text) -> std::size_t {
    std::istringstream in(text);
    try {
      sae::read_area_dataset(in);
    } catch (const sae::ParseError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of("area,y,D,x1\n"), 1u);
  EXPECT_EQ(line_of("area_id,y,D,x2\n"), 1u);
  EXPECT_EQ(line_of("area_id,y,D,x1\nA,1,1,1\nB,oops,1,1\nC,1,1,1\n"), 3u);
  EXPECT_EQ(line_of("area_id,y,D,x1\nA,1,1,1\nB,1,1\n"), 3u);
  EXPECT_EQ(line_of("area_id,y,D,x1\nA,1,1,1\nB,1,-1,1\n"), 3u);
  EXPECT_EQ(line_of("area_id,y,D,x1\nA,1,1,1\nA,1,1,1\n"), 3u);
  EXPECT_EQ(line_of("area_id,y,D,x1\nA,1,1,1\n"), 2u);
}

TEST(Dataset, WriteThenRead) {
  std::istringstream in("area_id,y,D,x1\nA,0.1,0.3,1\nB,-7.25,1e-3,1\n");
  const auto ds = sae::read_area_dataset(in);
  std::ostringstream out;
  sae::write_area_dataset(out, ds);
  std::istringstream back(out.str());
  const auto ds2 = sae::read_area_dataset(back);
  EXPECT_TRUE(ds.y == ds2.y);
  EXPECT_TRUE(ds.d == ds2.d);
  EXPECT_EQ(ds.area_id, ds2.area_id);
}

TEST(Report, CsvRoundTripIsExact) {
  sae::ScenarioConfig c;
  c.m = 15;
  c.n_sims = 5;
  c.B1 = 50;
  c.methods = {Method::Direct, Method::SB_PR, Method::TradFH};
  c.seed = std::numeric_limits<std::uint64_t>::max();
  const auto rep = sae::run_scenario(c);
  std::ostringstream out;
  sae::write_report_csv(out, rep.rows);
  std::istringstream in(out.str());
  const auto back = sae::read_report_csv(in);
  ASSERT_EQ(back.size(), rep.rows.size());
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_EQ(back[i], rep.rows[i]);
  std::ostringstream again;
  sae::write_report_csv(again, back);
  EXPECT_EQ(again.str(), out.str());
}

TEST(Report, BadHeaderIsSchemaError) {
  std::istringstream in("method,alpha,group\n");
  EXPECT_THROW(sae::read_report_csv(in), sae::SchemaError);
}

TEST(Report, RenderedTableHasOneLinePerCell) {
  std::vector<sae::ReportRow> rows;
  for (int g = 1; g <= 5; ++g) {
    rows.push_back({Method::SB_FH, 0.8, g, 79.5, 1.25, 10, 50, "P1", "FH", 0});
    rows.push_back({Method::Direct, 0.8, g, 80.5, 2.5, 10, 50, "P1", "none", 0});
  }
  const auto md = sae::render_report_table(rows, true);
  EXPECT_NE(md.find("SB.FH"), std::string::npos);
  EXPECT_NE(md.find("79.50 (1.25)"), std::string::npos);
  EXPECT_EQ(std::count(md.begin(), md.end(), '\n'), 7);
}

TEST(Reference, ReadsCoverageAndNegatives) {
  std::istringstream cells("method,alpha,group,coverage_pct,avg_length\nSB.FH,80,G1,79.94,2.27\nFH,0.95,2,93,\n");
  const auto c = sae::read_reference_cells(cells);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].method, Method::SB_FH);
  EXPECT_DOUBLE_EQ(c[0].alpha, 0.8);
  EXPECT_EQ(c[1].method, Method::TradFH);
  EXPECT_FALSE(c[1].avg_length.has_value());
  std::istringstream negs("estimator,stage,pct_negative\nPR,first,25.0\n");
  const auto n = sae::read_reference_negatives(negs);
  ASSERT_EQ(n.size(), 1u);
  EXPECT_EQ(n[0].stage, "first");
  std::istringstream bad("estimator,stage,pct_negative\nPR,third,25.0\n");
  EXPECT_THROW(sae::read_reference_negatives(bad), sae::ParseError);
}

TEST(Config, ParsesAllKeys) {
  const auto p = sae::parse_scenario_config(R"({
    "m": 15, "pattern": "P2", "A": 2, "G": "se", "beta": [0.5], "n_sims": 3,
    "B1": 60, "B2": 25, "alphas": [80, 0.9], "methods": ["SB.FH", "DB_PR", "DIRECT"],
    "seed": 12, "workers": 2, "floor": 0.02, "eblup_star_uses_original_y": true})");
  const auto& c = p.config;
  EXPECT_EQ(c.m, 15);
  EXPECT_EQ(c.pattern, sae::kPatternTwo);
  EXPECT_EQ(c.pattern_name, "P2");
  EXPECT_EQ(c.A, 2.0);
  EXPECT_EQ(c.G, sae::LinkingDistribution::shifted_exponential());
  EXPECT_EQ(c.alphas, (std::vector<double>{0.8, 0.9}));
  EXPECT_EQ(c.methods, (std::vector<Method>{Method::SB_FH, Method::DB_PR, Method::Direct}));
  EXPECT_EQ(c.seed, 12u);
  EXPECT_FALSE(p.seed_defaulted);
  EXPECT_EQ(c.estimation.floor, 0.02);
  EXPECT_TRUE(c.eblup_star_uses_original_y);
}

TEST(Config, MissingSeedDefaultsToZero) {
  const auto p = sae::parse_scenario_config(R"({"n_sims": 2})");
  EXPECT_EQ(p.config.seed, 0u);
  EXPECT_TRUE(p.seed_defaulted);
  sae::ScenarioReport rep;
  EXPECT_EQ(sae::make_manifest(p, rep)["seed"], 0);
  EXPECT_EQ(sae::make_manifest(p, rep)["seed_defaulted"], true);
}

TEST(Config, ProfileThenOverrides) {
  const auto p = sae::parse_scenario_config(R"({"profile": "paper", "n_sims": 7})");
  EXPECT_EQ(p.config.n_sims, 7);
  EXPECT_EQ(p.config.B1, 400);
  EXPECT_EQ(p.config.profile, "paper");
}

TEST(Config, UnknownKeysAreListed) {
  try {
    sae::parse_scenario_config(R"({"m": 50, "nsims": 3, "colour": 1})");
    FAIL() << "expected UnknownKeysError";
  } catch (const sae::UnknownKeysError& e) {
    EXPECT_EQ(e.keys(), (std::vector<std::string>{"colour", "nsims"}));
  }
}

TEST(Config, BadValuesAreConfigErrors) {
  EXPECT_THROW(sae::parse_scenario_config(R"({"m": "fifty"})"), sae::ConfigError);
  EXPECT_THROW(sae::parse_scenario_config(R"({"G": "t:3"})"), sae::ConfigError);
  EXPECT_THROW(sae::parse_scenario_config(R"({"m": 12})"), sae::ConfigError);
  EXPECT_THROW(sae::parse_scenario_config("[1,2]"), sae::ConfigError);
  EXPECT_THROW(sae::parse_scenario_config("{"), sae::ConfigError);
}
