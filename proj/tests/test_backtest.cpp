#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "nnshrink/backtest.hpp"
#include "nnshrink/errors.hpp"
#include "nnshrink/portfolio.hpp"
#include "nnshrink/synthetic.hpp"

using namespace nnshrink;

namespace {

ReturnsMatrix synthetic_returns(std::size_t n_assets, std::size_t days, std::uint64_t seed) {
  synthetic::Rng rng(seed);
  const auto pop = synthetic::spiked_population(n_assets, {8.0, 4.0}, 1.0, rng, 1e-2);
  ReturnsMatrix r;
  r.returns = synthetic::draw_returns(pop, days, rng);
  for (std::size_t i = 0; i < n_assets; ++i) r.assets.push_back("S" + std::to_string(i));
  r.dates = synthetic::weekday_dates("2010-01-04", days);
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("nnshrink_bt_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("rebalance schedule") {
  BacktestConfig cfg;
  SUBCASE("400 test days with stride 20 give 20 rebalances") {
    const auto s = rebalance_schedule(1000, 600, 250, cfg);
    REQUIRE(s.size() == 20);
    CHECK(s.front() == 600);
    CHECK(s.back() == 980);
  }
  SUBCASE("test-only lookback waits for n test days") {
    cfg.lookback_source = LookbackSource::TestOnly;
    const auto s = rebalance_schedule(1000, 600, 100, cfg);
    REQUIRE(s.size() == 15);
    CHECK(s.front() == 700);
  }
  SUBCASE("insufficient history") {
    CHECK_THROWS_AS(rebalance_schedule(300, 100, 150, cfg), DataError);
  }
}

TEST_CASE("run_backtest structure") {
  const auto r = synthetic_returns(12, 700, 1);
  BacktestConfig cfg;
  cfg.lookbacks = {10, 40, 100};

  const auto report = run_backtest(r, cfg);
  CHECK(report.runs.size() == 12);
  CHECK(report.assets == r.assets);
  CHECK(report.data_fingerprint == data_fingerprint(r));

  SUBCASE("every present run covers the whole test period") {
    for (const auto& run : report.runs) {
      if (run.absent) continue;
      CHECK(run.rebalance_index.size() == 20);
      CHECK(run.weights.size() == 20);
      CHECK(run.returns.size() == 400);
      CHECK(run.return_dates.front() == r.dates[300]);
      CHECK(run.return_dates.back() == r.dates[699]);
      for (const auto& w : run.weights) CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("identity weights are exactly 1/N") {
    for (const auto& w : report.find(Method::Identity, 40)->weights)
      for (Eigen::Index i = 0; i < w.size(); ++i) CHECK(w(i) == 1.0 / 12.0);
  }
  SUBCASE("SCM is absent when n <= N") {
    CHECK(report.find(Method::SCM, 10)->absent);
    CHECK_FALSE(report.find(Method::SCM, 40)->absent);
    CHECK_FALSE(report.find(Method::LW, 10)->absent);
  }
  SUBCASE("weights only use data before the rebalance date") {
    const MethodRun* run = report.find(Method::LW, 40);
    for (std::size_t k = 0; k < run->rebalance_index.size(); ++k) {
      const std::size_t t = run->rebalance_index[k];
      const Vector w = *method_weights(Method::LW, r.returns.middleCols(t - 40, 40), cfg, nullptr);
      CHECK((w - run->weights[k]).cwiseAbs().maxCoeff() == 0.0);
      for (std::size_t d = 0; d < 20; ++d)
        CHECK(run->returns[k * 20 + d] == doctest::Approx(w.dot(r.returns.col(t + d))).epsilon(1e-14));
    }
  }
  SUBCASE("future data does not move past weights") {
    ReturnsMatrix altered = r;
    altered.returns.rightCols(100).setRandom();
    const auto other = run_backtest(altered, cfg);
    const MethodRun* a = report.find(Method::Chen, 100);
    const MethodRun* b = other.find(Method::Chen, 100);
    for (std::size_t k = 0; k < 15; ++k) CHECK(a->weights[k] == b->weights[k]);
  }
  SUBCASE("serial and parallel agree exactly") {
    CHECK(run_backtest(r, cfg, nullptr, Execution::Serial) == report);
  }
}

TEST_CASE("test-only lookback source") {
  const auto r = synthetic_returns(10, 600, 2);
  BacktestConfig cfg;
  cfg.lookbacks = {100};
  cfg.methods = {Method::LW};
  cfg.lookback_source = LookbackSource::TestOnly;
  const auto report = run_backtest(r, cfg);
  CHECK(report.runs[0].returns.size() == 300);
  CHECK(report.runs[0].rebalance_index.front() == 300);
}

TEST_CASE("rolling comparison") {
  std::vector<double> b(300);
  synthetic::Rng rng(3);
  std::normal_distribution<double> nd(0.0, 0.01);
  for (auto& x : b) x = nd(rng);

  SUBCASE("identical series never win") {
    const auto c = compare_series(b, b, 40);
    CHECK(c.points == 261);
    CHECK(c.fraction == 0.0);
  }
  SUBCASE("halved series always win") {
    std::vector<double> a(b);
    for (auto& x : a) x *= 0.5;
    CHECK(compare_series(a, b, 40).fraction == 1.0);
  }
  SUBCASE("length mismatch") {
    CHECK_THROWS_AS(compare_series(std::vector<double>(10), b, 5), DataError);
  }
  SUBCASE("methods missing from a report") {
    const auto r = synthetic_returns(8, 500, 4);
    BacktestConfig cfg;
    cfg.lookbacks = {40};
    cfg.methods = {Method::LW, Method::Identity};
    const auto report = run_backtest(r, cfg);
    const auto c = compare_methods(report, Method::LW, Method::Identity, 40, 40);
    CHECK(c.points == 361);
    CHECK_THROWS_AS(compare_methods(report, Method::NN, Method::LW, 40, 40), ConfigError);
    CHECK_THROWS_AS(compare_methods(report, Method::LW, Method::Identity, 60, 40), ConfigError);
  }
}

TEST_CASE("report files") {
  const auto r = synthetic_returns(6, 500, 5);
  BacktestConfig cfg;
  cfg.lookbacks = {5, 40};
  const auto report = run_backtest(r, cfg);

  SUBCASE("risks.csv has one row per method and lookback") {
    std::ostringstream s;
    write_risks_csv(report, s);
    CHECK(count_lines(s.str()) == 1 + 4 * 2);
    CHECK(s.str().rfind("method,n,annualized_risk\n", 0) == 0);
    CHECK(s.str().find("scm,5,\n") != std::string::npos);
  }
  SUBCASE("rolling.csv has one row per point of every present run") {
    std::ostringstream s;
    write_rolling_csv(report, s);
    CHECK(count_lines(s.str()) == 1 + 7 * 361);
  }
  SUBCASE("empty method list gives headers only") {
    BacktestConfig none = cfg;
    none.methods.clear();
    const auto empty = run_backtest(r, none);
    const auto dir = scratch("empty");
    emit_report(empty, dir);
    CHECK(slurp(dir / "risks.csv") == "method,n,annualized_risk\n");
    CHECK(slurp(dir / "rolling.csv") == "date,method,n,rolling_risk\n");
    CHECK(slurp(dir / "weights.csv") == "date,method,n,S0,S1,S2,S3,S4,S5\n");
    std::filesystem::remove_all(dir);
  }
  SUBCASE("JSON round trip") {
    CHECK(report_from_json(report_to_json(report)) == report);
    const auto dir = scratch("json");
    emit_report(report, dir);
    CHECK(load_report(dir) == report);
    std::filesystem::remove_all(dir);
  }
  SUBCASE("two runs give byte-identical files") {
    const auto a = scratch("a"), b = scratch("b");
    emit_report(report, a);
    emit_report(run_backtest(r, cfg), b);
    for (const char* f : {"risks.csv", "rolling.csv", "weights.csv", "report.json"})
      CHECK(slurp(a / f) == slurp(b / f));
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
  }
}

TEST_CASE("config") {
  BacktestConfig cfg;
  CHECK_NOTHROW(validate(cfg));
  cfg.holding = 10;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = {};
  cfg.lookbacks = {1};
  CHECK_THROWS_AS(validate(cfg), ConfigError);

  cfg = {};
  cfg.methods = {Method::NN, Method::Chen};
  cfg.model_path = "m.bin";
  cfg.test_start = "2011-01-03";
  cfg.lw_formula = LwFormula::Paper;
  CHECK(backtest_config_from_json(backtest_config_to_json(cfg)) == cfg);
  CHECK_THROWS_AS(backtest_config_from_json(R"({"lookback": [40]})"), ConfigError);
  CHECK_THROWS_AS(parse_methods("scm,magic"), ConfigError);
  CHECK(parse_methods("scm,lw,chen,identity,nn").size() == 5);

  const auto r = synthetic_returns(6, 300, 6);
  BacktestConfig nn;
  nn.methods = {Method::NN};
  nn.lookbacks = {40};
  nn.test_days = 100;
  CHECK_THROWS_AS(run_backtest(r, nn), ConfigError);
}

TEST_CASE("oracle ranking on a known population") {
  synthetic::Rng rng(7);
  const auto pop = synthetic::spiked_population(20, {10.0, 6.0, 3.0}, 1.0, rng);
  double scm = 0.0, lw = 0.0, best = 0.0;
  BacktestConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix x = synthetic::draw_returns(pop, 60, rng);
    scm += realized_risk(*method_weights(Method::SCM, x, cfg, nullptr), pop.covariance);
    lw += realized_risk(*method_weights(Method::LW, x, cfg, nullptr), pop.covariance);
    best += theoretical_min_risk(pop.covariance);
  }
  CHECK(best <= lw);
  CHECK(lw <= scm);
}
