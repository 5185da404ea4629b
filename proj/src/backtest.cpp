#include "nnshrink/backtest.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "nnshrink/errors.hpp"
#include "nnshrink/portfolio.hpp"
#include "nnshrink/trainer.hpp"

namespace nnshrink {
namespace {

using nlohmann::json;

template <class T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json config_json(const BacktestConfig& cfg) {
  json methods = json::array();
  for (Method m : cfg.methods) methods.push_back(std::string(to_string(m)));
  return json{{"lookbacks", cfg.lookbacks},
              {"holding", cfg.holding},
              {"stride", cfg.stride},
              {"methods", methods},
              {"test_days", cfg.test_days},
              {"test_start", cfg.test_start ? json(*cfg.test_start) : json(nullptr)},
              {"model_path", cfg.model_path ? json(*cfg.model_path) : json(nullptr)},
              {"annualization", cfg.annualization},
              {"lookback_source", std::string(to_string(cfg.lookback_source))},
              {"lw_formula", std::string(to_string(cfg.lw_formula))},
              {"rolling_window", cfg.rolling_window}};
}

BacktestConfig config_from(const json& j) {
  if (!j.is_object()) throw ConfigError("backtest config must be a JSON object");
  static const std::vector<std::string> known{"lookbacks", "holding", "stride", "methods",
                                              "test_days", "test_start", "model_path", "annualization",
                                              "lookback_source", "lw_formula", "rolling_window"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown backtest config key '" + key + "'");
  BacktestConfig cfg;
  try {
    read_field(j, "lookbacks", cfg.lookbacks);
    read_field(j, "holding", cfg.holding);
    read_field(j, "stride", cfg.stride);
    read_field(j, "test_days", cfg.test_days);
    read_field(j, "annualization", cfg.annualization);
    read_field(j, "rolling_window", cfg.rolling_window);
    if (j.contains("methods")) {
      cfg.methods.clear();
      for (const auto& m : j.at("methods")) cfg.methods.push_back(parse_method(m.get<std::string>()));
    }
    if (j.contains("test_start") && !j.at("test_start").is_null())
      cfg.test_start = j.at("test_start").get<std::string>();
    if (j.contains("model_path") && !j.at("model_path").is_null())
      cfg.model_path = j.at("model_path").get<std::string>();
    if (j.contains("lookback_source"))
      cfg.lookback_source = parse_lookback_source(j.at("lookback_source").get<std::string>());
    if (j.contains("lw_formula")) cfg.lw_formula = parse_lw_formula(j.at("lw_formula").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad backtest config value: ") + e.what());
  }
  return cfg;
}

Vector run_returns(const Vector& h, const Matrix& x, std::size_t begin, std::size_t end) {
  return x.middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)).transpose() * h;
}

MethodRun evaluate(const ReturnsMatrix& r, const BacktestConfig& cfg, const ShrinkageModel* model, Method method,
                   std::size_t lookback, std::size_t t0) {
  MethodRun run;
  run.method = method;
  run.lookback = lookback;
  const auto schedule = rebalance_schedule(r.n_days(), t0, lookback, cfg);
  for (std::size_t t : schedule) {
    // Estimation uses columns [t - lookback, t); day t is the first held day.
    const Matrix window = r.returns.middleCols(static_cast<Eigen::Index>(t - lookback),
                                               static_cast<Eigen::Index>(lookback));
    std::string reason;
    const auto h = method_weights(method, window, cfg, model, &reason);
    if (!h) {
      MethodRun absent;
      absent.method = method;
      absent.lookback = lookback;
      absent.absent = true;
      absent.absent_reason = reason;
      return absent;
    }
    const std::size_t end = std::min(t + cfg.holding, r.n_days());
    const Vector held = run_returns(*h, r.returns, t, end);
    run.rebalance_dates.push_back(r.dates[t]);
    run.rebalance_index.push_back(t);
    run.weights.push_back(*h);
    for (std::size_t k = t; k < end; ++k) {
      run.return_dates.push_back(r.dates[k]);
      run.returns.push_back(held(static_cast<Eigen::Index>(k - t)));
    }
  }
  run.annualized_risk = std::sqrt(cfg.annualization) * population_std(run.returns);
  return run;
}

json run_json(const MethodRun& run) {
  json weights = json::array();
  for (const Vector& w : run.weights) weights.push_back(std::vector<double>(w.data(), w.data() + w.size()));
  return json{{"method", std::string(to_string(run.method))},
              {"lookback", run.lookback},
              {"absent", run.absent},
              {"absent_reason", run.absent_reason},
              {"rebalance_dates", run.rebalance_dates},
              {"rebalance_index", run.rebalance_index},
              {"weights", weights},
              {"return_dates", run.return_dates},
              {"returns", run.returns},
              {"annualized_risk", run.annualized_risk}};
}

MethodRun run_from(const json& j) {
  MethodRun run;
  run.method = parse_method(j.at("method").get<std::string>());
  run.lookback = j.at("lookback").get<std::size_t>();
  run.absent = j.at("absent").get<bool>();
  run.absent_reason = j.at("absent_reason").get<std::string>();
  run.rebalance_dates = j.at("rebalance_dates").get<std::vector<std::string>>();
  run.rebalance_index = j.at("rebalance_index").get<std::vector<std::size_t>>();
  for (const auto& w : j.at("weights")) {
    const auto v = w.get<std::vector<double>>();
    run.weights.emplace_back(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  run.return_dates = j.at("return_dates").get<std::vector<std::string>>();
  run.returns = j.at("returns").get<std::vector<double>>();
  run.annualized_risk = j.at("annualized_risk").get<double>();
  return run;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::SCM: return "scm";
    case Method::LW: return "lw";
    case Method::Chen: return "chen";
    case Method::Identity: return "identity";
    case Method::NN: return "nn";
  }
  return "unknown";
}

Method parse_method(std::string_view s) {
  for (Method m : {Method::SCM, Method::LW, Method::Chen, Method::Identity, Method::NN})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method '" + std::string(s) + "'");
}

std::vector<Method> parse_methods(std::string_view csv) {
  std::vector<Method> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    const std::size_t comma = std::min(csv.find(',', pos), csv.size());
    const auto token = csv.substr(pos, comma - pos);
    if (!token.empty()) out.push_back(parse_method(token));
    pos = comma + 1;
  }
  return out;
}

std::string_view to_string(LookbackSource s) { return s == LookbackSource::Pretest ? "pretest" : "test-only"; }

LookbackSource parse_lookback_source(std::string_view s) {
  if (s == "pretest") return LookbackSource::Pretest;
  if (s == "test-only") return LookbackSource::TestOnly;
  throw ConfigError("unknown lookback source '" + std::string(s) + "' (expected pretest or test-only)");
}

void validate(const BacktestConfig& cfg) {
  if (cfg.stride < 1) throw ConfigError("stride must be >= 1");
  if (cfg.holding != cfg.stride) throw ConfigError("holding period must equal the rebalance stride");
  for (auto n : cfg.lookbacks)
    if (n < 2) throw ConfigError("lookback must be >= 2");
  if (!(cfg.annualization > 0.0)) throw ConfigError("annualization factor must be > 0");
  if (cfg.rolling_window < 2) throw ConfigError("rolling window must be >= 2");
}

std::string backtest_config_to_json(const BacktestConfig& cfg) { return config_json(cfg).dump(2); }

BacktestConfig backtest_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid backtest config JSON: ") + e.what());
  }
  BacktestConfig cfg = config_from(j);
  validate(cfg);
  return cfg;
}

const MethodRun* BacktestReport::find(Method m, std::size_t lookback) const {
  for (const auto& run : runs)
    if (run.method == m && run.lookback == lookback) return &run;
  return nullptr;
}

std::size_t test_start_index(const ReturnsMatrix& r, const BacktestConfig& cfg) {
  if (cfg.test_start) {
    const auto it = std::lower_bound(r.dates.begin(), r.dates.end(), *cfg.test_start);
    if (it == r.dates.end()) throw ConfigError("test start " + *cfg.test_start + " is after the last date");
    return static_cast<std::size_t>(it - r.dates.begin());
  }
  if (cfg.test_days == 0 || cfg.test_days > r.n_days()) throw ConfigError("test_days must lie in [1, n_days]");
  return r.n_days() - cfg.test_days;
}

std::vector<std::size_t> rebalance_schedule(std::size_t n_days, std::size_t test_start, std::size_t lookback,
                                            const BacktestConfig& cfg) {
  const std::size_t first = cfg.lookback_source == LookbackSource::Pretest ? test_start : test_start + lookback;
  if (first < lookback)
    throw DataError("not enough history before the test period for lookback " + std::to_string(lookback));
  std::vector<std::size_t> out;
  for (std::size_t t = first; t < n_days; t += cfg.stride) out.push_back(t);
  return out;
}

std::optional<Vector> method_weights(Method method, const Matrix& in_sample, const BacktestConfig& cfg,
                                     const ShrinkageModel* model, std::string* reason) {
  switch (method) {
    case Method::SCM:
      if (in_sample.cols() <= in_sample.rows()) {
        if (reason) *reason = "sample covariance is singular when n <= N";
        return std::nullopt;
      }
      return gmvp_weights(invert_spd(sample_covariance(in_sample).matrix)).weights;
    case Method::LW:
      return gmvp_weights(invert_spd(ledoit_wolf(in_sample, cfg.lw_formula).matrix)).weights;
    case Method::Chen:
      return gmvp_weights(invert_spd(chen_estimator(in_sample).matrix)).weights;
    case Method::Identity:
      return gmvp_weights(identity_estimate(static_cast<std::size_t>(in_sample.rows())).matrix).weights;
    case Method::NN:
      if (!model) throw ConfigError("method nn needs a model file");
      return gmvp_weights(nn_precision(*model, in_sample, cfg.lw_formula)).weights;
  }
  throw ConfigError("unknown method");
}

BacktestReport run_backtest(const ReturnsMatrix& r, const BacktestConfig& cfg, const ShrinkageModel* model,
                            Execution exec) {
  validate(cfg);
  if (std::find(cfg.methods.begin(), cfg.methods.end(), Method::NN) != cfg.methods.end() && !model)
    throw ConfigError("method nn needs a model file");
  const std::size_t t0 = test_start_index(r, cfg);
  for (auto n : cfg.lookbacks) rebalance_schedule(r.n_days(), t0, n, cfg);

  BacktestReport report;
  report.config = cfg;
  report.assets = r.assets;
  report.data_fingerprint = data_fingerprint(r);

  const std::size_t n_methods = cfg.methods.size();
  const std::size_t tasks = cfg.lookbacks.size() * n_methods;
  report.runs.resize(tasks);
  std::vector<std::exception_ptr> errors(tasks);
  const auto n_tasks = static_cast<std::ptrdiff_t>(tasks);
#pragma omp parallel for schedule(dynamic) if (exec == Execution::Parallel)
  for (std::ptrdiff_t k = 0; k < n_tasks; ++k) {
    const auto i = static_cast<std::size_t>(k);
    try {
      report.runs[i] = evaluate(r, cfg, model, cfg.methods[i % n_methods], cfg.lookbacks[i / n_methods], t0);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return report;
}

Comparison compare_series(const std::vector<double>& a, const std::vector<double>& b, std::size_t window,
                          double annualization) {
  if (a.size() != b.size()) throw DataError("compared return series differ in length");
  const auto ra = rolling_annualized_risk(a, window, annualization);
  const auto rb = rolling_annualized_risk(b, window, annualization);
  std::size_t wins = 0;
  for (std::size_t i = 0; i < ra.size(); ++i)
    if (ra[i] < rb[i]) ++wins;
  return {static_cast<double>(wins) / static_cast<double>(ra.size()), ra.size()};
}

Comparison compare_methods(const BacktestReport& report, Method a, Method b, std::size_t lookback,
                           std::size_t window) {
  const MethodRun* ra = report.find(a, lookback);
  const MethodRun* rb = report.find(b, lookback);
  if (!ra || ra->absent) throw ConfigError("method " + std::string(to_string(a)) + " is missing from the report");
  if (!rb || rb->absent) throw ConfigError("method " + std::string(to_string(b)) + " is missing from the report");
  return compare_series(ra->returns, rb->returns, window, report.config.annualization);
}

std::string data_fingerprint(const ReturnsMatrix& r) {
  uLong h = crc32(0L, Z_NULL, 0);
  auto feed = [&h](const void* p, std::size_t n) {
    h = crc32(h, static_cast<const Bytef*>(p), static_cast<uInt>(n));
  };
  for (const auto& a : r.assets) feed(a.data(), a.size() + 1);
  for (const auto& d : r.dates) feed(d.data(), d.size() + 1);
  feed(r.returns.data(), static_cast<std::size_t>(r.returns.size()) * sizeof(double));
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(h));
  return buf;
}

std::string report_to_json(const BacktestReport& report) {
  json runs = json::array();
  for (const auto& run : report.runs) runs.push_back(run_json(run));
  json j{{"config", config_json(report.config)},
         {"assets", report.assets},
         {"data_fingerprint", report.data_fingerprint},
         {"runs", runs}};
  return j.dump(1);
}

BacktestReport report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    BacktestReport report;
    report.config = config_from(j.at("config"));
    report.assets = j.at("assets").get<std::vector<std::string>>();
    report.data_fingerprint = j.at("data_fingerprint").get<std::string>();
    for (const auto& rj : j.at("runs")) report.runs.push_back(run_from(rj));
    return report;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report JSON: ") + e.what());
  }
}

void write_risks_csv(const BacktestReport& report, std::ostream& out) {
  out << "method,n,annualized_risk\n";
  for (const auto& run : report.runs) {
    out << to_string(run.method) << ',' << run.lookback << ',';
    if (!run.absent) out << format_double(run.annualized_risk);
    out << '\n';
  }
}

void write_rolling_csv(const BacktestReport& report, std::ostream& out) {
  out << "date,method,n,rolling_risk\n";
  const std::size_t w = report.config.rolling_window;
  for (const auto& run : report.runs) {
    if (run.absent || run.returns.size() < w) continue;
    const auto rolling = rolling_annualized_risk(run.returns, w, report.config.annualization);
    for (std::size_t i = 0; i < rolling.size(); ++i)
      out << run.return_dates[i + w - 1] << ',' << to_string(run.method) << ',' << run.lookback << ','
          << format_double(rolling[i]) << '\n';
  }
}

void write_weights_csv(const BacktestReport& report, std::ostream& out) {
  out << "date,method,n";
  for (const auto& a : report.assets) out << ',' << a;
  out << '\n';
  for (const auto& run : report.runs)
    for (std::size_t k = 0; k < run.weights.size(); ++k) {
      out << run.rebalance_dates[k] << ',' << to_string(run.method) << ',' << run.lookback;
      for (Eigen::Index i = 0; i < run.weights[k].size(); ++i) out << ',' << format_double(run.weights[k](i));
      out << '\n';
    }
}

void emit_report(const BacktestReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  {
    auto out = open_output(dir / "risks.csv");
    write_risks_csv(report, out);
  }
  {
    auto out = open_output(dir / "rolling.csv");
    write_rolling_csv(report, out);
  }
  {
    auto out = open_output(dir / "weights.csv");
    write_weights_csv(report, out);
  }
  auto out = open_output(dir / "report.json");
  out << report_to_json(report) << '\n';
  if (!out) throw DataError("failed writing report.json");
}

BacktestReport load_report(const std::filesystem::path& dir) {
  std::ifstream in(dir / "report.json");
  if (!in) throw DataError("cannot open " + (dir / "report.json").string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return report_from_json(text);
}

}  // namespace nnshrink
