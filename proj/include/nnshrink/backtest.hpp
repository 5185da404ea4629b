#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nnshrink/estimators.hpp"
#include "nnshrink/market_data.hpp"
#include "nnshrink/shrinkage_net.hpp"

namespace nnshrink {

enum class Method { SCM, LW, Chen, Identity, NN };

std::string_view to_string(Method m);
Method parse_method(std::string_view s);
std::vector<Method> parse_methods(std::string_view csv);

/// pretest: lookback windows may reach into history before the test period.
/// test_only: the first rebalance waits until a full lookback of test days exists.
enum class LookbackSource { Pretest, TestOnly };

std::string_view to_string(LookbackSource s);
LookbackSource parse_lookback_source(std::string_view s);

struct BacktestConfig {
  std::vector<std::size_t> lookbacks{40, 60, 100, 150, 200, 250};
  std::size_t holding = 20;
  std::size_t stride = 20;
  std::vector<Method> methods{Method::SCM, Method::LW, Method::Chen, Method::Identity};
  std::size_t test_days = 400;
  std::optional<std::string> test_start;  // first test date; overrides test_days
  std::optional<std::string> model_path;
  double annualization = 252.0;
  LookbackSource lookback_source = LookbackSource::Pretest;
  LwFormula lw_formula = LwFormula::Standard;
  std::size_t rolling_window = 40;

  bool operator==(const BacktestConfig&) const = default;
};

/// Throws ConfigError when an invariant (stride >= 1, holding == stride, lookback >= 2) fails.
void validate(const BacktestConfig& cfg);

std::string backtest_config_to_json(const BacktestConfig& cfg);
BacktestConfig backtest_config_from_json(const std::string& text);

/// One (method, lookback) evaluation.
struct MethodRun {
  Method method = Method::LW;
  std::size_t lookback = 0;
  bool absent = false;
  std::string absent_reason;
  std::vector<std::string> rebalance_dates;
  std::vector<std::size_t> rebalance_index;  // column of the first held day
  std::vector<Vector> weights;
  std::vector<std::string> return_dates;
  std::vector<double> returns;
  double annualized_risk = 0.0;

  bool operator==(const MethodRun&) const = default;
};

struct BacktestReport {
  BacktestConfig config;
  std::vector<std::string> assets;
  std::string data_fingerprint;
  std::vector<MethodRun> runs;

  const MethodRun* find(Method m, std::size_t lookback) const;
  bool operator==(const BacktestReport&) const = default;
};

/// First test column: index of test_start if given, else n_days - test_days.
std::size_t test_start_index(const ReturnsMatrix& r, const BacktestConfig& cfg);

/// Rebalance columns for one lookback (each held for cfg.holding days or until data ends).
std::vector<std::size_t> rebalance_schedule(std::size_t n_days, std::size_t test_start,
                                            std::size_t lookback, const BacktestConfig& cfg);

/// Weights for a single in-sample window, or nullopt if the method is inapplicable.
std::optional<Vector> method_weights(Method method, const Matrix& in_sample,
                                     const BacktestConfig& cfg, const ShrinkageModel* model,
                                     std::string* reason = nullptr);

BacktestReport run_backtest(const ReturnsMatrix& r, const BacktestConfig& cfg,
                            const ShrinkageModel* model = nullptr,
                            Execution exec = Execution::Parallel);

struct Comparison {
  double fraction = 0.0;  // share of points where a's rolling risk is strictly lower
  std::size_t points = 0;
};

Comparison compare_series(const std::vector<double>& a, const std::vector<double>& b,
                          std::size_t window, double annualization = 252.0);
Comparison compare_methods(const BacktestReport& report, Method a, Method b, std::size_t lookback,
                           std::size_t window);

std::string data_fingerprint(const ReturnsMatrix& r);

std::string report_to_json(const BacktestReport& report);
BacktestReport report_from_json(const std::string& text);

void write_risks_csv(const BacktestReport& report, std::ostream& out);
void write_rolling_csv(const BacktestReport& report, std::ostream& out);
void write_weights_csv(const BacktestReport& report, std::ostream& out);

/// Writes risks.csv, rolling.csv, weights.csv and report.json into dir.
void emit_report(const BacktestReport& report, const std::filesystem::path& dir);
BacktestReport load_report(const std::filesystem::path& dir);

}  // namespace nnshrink
