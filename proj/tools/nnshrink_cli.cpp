// nnshrink: ingest prices, train the shrinkage network, run and summarize backtests.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nnshrink/backtest.hpp"
#include "nnshrink/errors.hpp"
#include "nnshrink/market_data.hpp"
#include "nnshrink/synthetic.hpp"
#include "nnshrink/trainer.hpp"

using namespace nnshrink;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read config " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json read_json_object(const fs::path& p) {
  json j;
  try {
    j = json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw ConfigError("invalid JSON in " + p.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(p.string() + " must hold a JSON object");
  return j;
}

// Moves `key` out of a config object into `dst` unless the flag was given on the command line.
template <class T>
void take(json& j, const char* key, const CLI::Option* flag, T& dst) {
  if (!j.contains(key)) return;
  try {
    if (flag->count() == 0) dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
  j.erase(key);
}

void reject_leftovers(const json& j, const char* what) {
  if (!j.empty()) throw ConfigError(std::string("unknown ") + what + " config key '" + j.begin().key() + "'");
}

std::vector<std::size_t> parse_lookbacks(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream s(csv);
  std::string item;
  while (std::getline(s, item, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v < 2) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("bad lookback '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("no lookbacks given");
  return out;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string("missing ") + flag);
}

struct IngestArgs {
  std::string prices, out, config;
};

void run_ingest(const IngestArgs& a, CLI::App& cmd) {
  std::string prices = a.prices, out = a.out;
  if (!a.config.empty()) {
    json j = read_json_object(a.config);
    take(j, "prices", cmd.get_option("--prices"), prices);
    take(j, "out", cmd.get_option("--out"), out);
    reject_leftovers(j, "ingest");
  }
  require(prices, "--prices");
  require(out, "--out");
  const ReturnsMatrix r = compute_returns(load_prices(prices));
  save_returns(r, out);
  std::cerr << "ingest: " << r.n_assets() << " assets, " << r.n_days() << " returns -> " << out << '\n';
}

struct SimulateArgs {
  std::string out;
  std::size_t assets = 50, days = 1000, spikes = 5;
  double spike_lo = 5.0, spike_hi = 20.0, scale = 1e-2;
  std::uint64_t seed = 1;
  std::string first_date = "2010-01-04";
};

void run_simulate(const SimulateArgs& a) {
  require(a.out, "--out");
  if (a.assets < 1 || a.days < 1) throw ConfigError("need at least one asset and one day");
  synthetic::Rng rng(a.seed);
  const auto pop = synthetic::spiked_population(a.assets, synthetic::linear_spikes(a.spikes, a.spike_lo, a.spike_hi),
                                               1.0, rng, a.scale);
  const Matrix x = synthetic::draw_returns(pop, a.days, rng);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < a.assets; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "A%03zu", i);
    names.emplace_back(buf);
  }
  save_prices(synthetic::price_table(x, names, a.first_date), a.out);
  std::cerr << "simulate: " << a.assets << " assets, " << a.days + 1 << " price rows -> " << a.out << '\n';
}

struct TrainArgs {
  std::string data, config, out, log;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  bool quiet = false;
};

void run_train(const TrainArgs& a) {
  require(a.data, "--data");
  require(a.out, "--out");
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : train_config_from_json(read_text(a.config));
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  const ReturnsMatrix r = load_returns(a.data);
  const TrainResult res = train(r, cfg, [&](const EpochLog& e) {
    if (!a.quiet)
      std::cerr << "epoch " << e.epoch << " train " << e.mean_train_loss << " val " << e.mean_val_loss << " skipped "
                << e.skipped_samples << '\n';
  });
  save_model(res.model, a.out);
  if (!a.log.empty()) {
    std::ofstream log(a.log);
    if (!log) throw DataError("cannot write " + a.log);
    write_train_log(res.log, log);
  }
  std::cerr << "train: best epoch " << res.best_epoch << " of " << res.log.size() << " -> " << a.out << '\n';
}

struct BacktestArgs {
  std::string data, model, methods, estimator, lookbacks, out, config, lookback_source, lw_formula, test_start;
  std::size_t test_days = 0;
};

void run_backtest_cmd(const BacktestArgs& a, CLI::App& cmd) {
  BacktestConfig cfg;
  std::string data = a.data, model = a.model, out = a.out;
  if (!a.config.empty()) {
    json j = read_json_object(a.config);
    take(j, "data", cmd.get_option("--data"), data);
    take(j, "out", cmd.get_option("--out"), out);
    if (j.contains("model") && !j.contains("model_path")) {
      j["model_path"] = j.at("model");
      j.erase("model");
    }
    cfg = backtest_config_from_json(j.dump());
    if (cfg.model_path && model.empty()) model = *cfg.model_path;
  }
  if (!a.methods.empty()) cfg.methods = parse_methods(a.methods);
  if (!a.estimator.empty()) cfg.methods = {parse_method(a.estimator)};
  if (!a.lookbacks.empty()) cfg.lookbacks = parse_lookbacks(a.lookbacks);
  if (!a.lookback_source.empty()) cfg.lookback_source = parse_lookback_source(a.lookback_source);
  if (!a.lw_formula.empty()) cfg.lw_formula = parse_lw_formula(a.lw_formula);
  if (a.test_days) cfg.test_days = a.test_days;
  if (!a.test_start.empty()) cfg.test_start = a.test_start;
  cfg.model_path = model.empty() ? std::nullopt : std::optional<std::string>(model);
  require(data, "--data");
  require(out, "--out");
  validate(cfg);

  const ReturnsMatrix r = load_returns(data);
  std::optional<ShrinkageModel> net;
  if (cfg.model_path) net = load_model(*cfg.model_path);
  const BacktestReport report = run_backtest(r, cfg, net ? &*net : nullptr);
  emit_report(report, out);
  for (const auto& run : report.runs) {
    std::cerr << to_string(run.method) << " n=" << run.lookback << ": ";
    if (run.absent)
      std::cerr << "absent (" << run.absent_reason << ")\n";
    else
      std::cerr << run.annualized_risk << '\n';
  }
}

struct ReportArgs {
  std::string in, compare, config, out;
  std::size_t window = 40;
  std::optional<std::size_t> lookback;
};

void run_report(const ReportArgs& a, CLI::App& cmd) {
  std::string in = a.in, compare = a.compare, out = a.out;
  std::size_t window = a.window;
  if (!a.config.empty()) {
    json j = read_json_object(a.config);
    take(j, "in", cmd.get_option("--in"), in);
    take(j, "compare", cmd.get_option("--compare"), compare);
    take(j, "window", cmd.get_option("--window"), window);
    take(j, "out", cmd.get_option("--out"), out);
    reject_leftovers(j, "report");
  }
  require(in, "--in");
  require(compare, "--compare");
  const auto pair = parse_methods(compare);
  if (pair.size() != 2) throw ConfigError("--compare takes exactly two methods, e.g. nn,lw");
  const BacktestReport report = load_report(in);

  std::ostringstream csv;
  csv << "n,method_a,method_b,window,points,fraction\n";
  for (std::size_t n : report.config.lookbacks) {
    if (a.lookback && n != *a.lookback) continue;
    const MethodRun* ra = report.find(pair[0], n);
    const MethodRun* rb = report.find(pair[1], n);
    csv << n << ',' << to_string(pair[0]) << ',' << to_string(pair[1]) << ',' << window << ',';
    if (!ra || !rb) throw ConfigError("method missing from the report at n=" + std::to_string(n));
    if (ra->absent || rb->absent) {
      csv << "0,\n";
      continue;
    }
    const Comparison c = compare_methods(report, pair[0], pair[1], n, window);
    csv << c.points << ',' << format_double(c.fraction) << '\n';
  }
  std::cout << csv.str();
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw DataError("cannot write " + out);
    f << csv.str();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural eigenvalue-shrinkage precision estimation for minimum-variance portfolios"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Convert a price CSV into log returns");
  ingest_cmd->add_option("--prices", ingest.prices, "Price CSV: date column, then one column per asset");
  ingest_cmd->add_option("--out", ingest.out, "Returns CSV to write");
  ingest_cmd->add_option("--config", ingest.config, "JSON file with the same keys as the flags");

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Write synthetic prices from a spiked covariance");
  sim_cmd->add_option("--out", sim.out, "Price CSV to write")->required();
  sim_cmd->add_option("--assets", sim.assets, "Number of assets");
  sim_cmd->add_option("--days", sim.days, "Number of returns (price rows minus one)");
  sim_cmd->add_option("--spikes", sim.spikes, "Number of spiked eigenvalues");
  sim_cmd->add_option("--spike-lo", sim.spike_lo, "Smallest spike");
  sim_cmd->add_option("--spike-hi", sim.spike_hi, "Largest spike");
  sim_cmd->add_option("--scale", sim.scale, "Daily volatility of the bulk");
  sim_cmd->add_option("--seed", sim.seed, "RNG seed");
  sim_cmd->add_option("--first-date", sim.first_date, "First price date (ISO)");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the shrinkage network");
  train_cmd->add_option("--data", tr.data, "Returns CSV");
  train_cmd->add_option("--config", tr.config, "Training config JSON");
  train_cmd->add_option("--out", tr.out, "Model file to write");
  train_cmd->add_option("--log", tr.log, "Per-epoch CSV log");
  train_cmd->add_option("--seed", tr.seed, "Overrides the config seed");
  train_cmd->add_option("--epochs", tr.epochs, "Overrides the config epoch count");
  train_cmd->add_flag("--quiet", tr.quiet, "No per-epoch progress");

  BacktestArgs bt;
  auto* bt_cmd = app.add_subcommand("backtest", "Rolling-window out-of-sample evaluation");
  bt_cmd->add_option("--data", bt.data, "Returns CSV");
  bt_cmd->add_option("--model", bt.model, "Model file (needed for nn)");
  bt_cmd->add_option("--methods", bt.methods, "Comma list of scm,lw,chen,identity,nn");
  bt_cmd->add_option("--estimator", bt.estimator, "Single method; shorthand for --methods");
  bt_cmd->add_option("--lookback", bt.lookbacks, "Comma list of lookback lengths");
  bt_cmd->add_option("--lookback-source", bt.lookback_source, "pretest or test-only");
  bt_cmd->add_option("--lw-formula", bt.lw_formula, "standard or paper");
  bt_cmd->add_option("--test-days", bt.test_days, "Length of the test period");
  bt_cmd->add_option("--test-start", bt.test_start, "First test date; overrides --test-days");
  bt_cmd->add_option("--out", bt.out, "Output directory");
  bt_cmd->add_option("--config", bt.config, "Backtest config JSON");

  ReportArgs rep;
  auto* rep_cmd = app.add_subcommand("report", "Rolling-risk win fraction of one method over another");
  rep_cmd->add_option("--in", rep.in, "Backtest output directory");
  rep_cmd->add_option("--compare", rep.compare, "Two methods, e.g. nn,lw");
  rep_cmd->add_option("--window", rep.window, "Rolling window length");
  rep_cmd->add_option("--lookback", rep.lookback, "Only this lookback");
  rep_cmd->add_option("--out", rep.out, "Also write the table here");
  rep_cmd->add_option("--config", rep.config, "JSON file with the same keys as the flags");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*ingest_cmd) run_ingest(ingest, *ingest_cmd);
    if (*sim_cmd) run_simulate(sim);
    if (*train_cmd) run_train(tr);
    if (*bt_cmd) run_backtest_cmd(bt, *bt_cmd);
    if (*rep_cmd) run_report(rep, *rep_cmd);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}
