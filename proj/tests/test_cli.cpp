#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "nnshrink/errors.hpp"
#include "nnshrink/shrinkage_net.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "nnshrink_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = "cd '" + workdir().string() + "' && '" NNSHRINK_CLI "' " + args + " >cli.out 2>cli.err";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(workdir() / p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(workdir() / p) << text; }

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("ingest -> train -> backtest -> report") {
  REQUIRE(run("simulate --out prices.csv --assets 20 --days 900 --seed 5") == 0);
  CHECK(lines(slurp("prices.csv")) == 902);

  REQUIRE(run("ingest --prices prices.csv --out returns.csv") == 0);
  CHECK(lines(slurp("returns.csv")) == 901);

  write("train.json", R"({"epochs": 2, "batches_per_epoch": 3, "n_max": 100, "assets_max": 20,
                          "model": {"width": 8, "heads": 2, "ff_width": 16, "layers": 1}})");
  REQUIRE(run("train --data returns.csv --config train.json --out model.bin --log train.csv") == 0);
  CHECK(slurp("train.csv").rfind("epoch,mean_train_loss,mean_val_loss,skipped_samples\n", 0) == 0);
  CHECK(lines(slurp("train.csv")) == 3);

  REQUIRE(run("backtest --data returns.csv --model model.bin --methods scm,lw,chen,identity,nn "
              "--lookback 20,60 --out bt") == 0);
  const std::string risks = slurp("bt/risks.csv");
  CHECK(lines(risks) == 11);
  CHECK(risks.find("scm,20,\n") != std::string::npos);

  REQUIRE(run("report --in bt --compare nn,lw --window 40") == 0);
  const std::string table = slurp("cli.out");
  CHECK(table.rfind("n,method_a,method_b,window,points,fraction\n", 0) == 0);
  CHECK(table.find("60,nn,lw,40,361,") != std::string::npos);

  SUBCASE("config file mirrors the flags") {
    write("bt.json", R"({"data": "returns.csv", "out": "bt2", "methods": ["lw", "identity"], "lookbacks": [60]})");
    REQUIRE(run("backtest --config bt.json") == 0);
    CHECK(lines(slurp("bt2/risks.csv")) == 3);
    REQUIRE(run("backtest --config bt.json --estimator chen --out bt3") == 0);
    CHECK(slurp("bt3/risks.csv").find("chen,60,") != std::string::npos);
    write("rep.json", R"({"in": "bt2", "compare": "lw,identity", "window": 20})");
    REQUIRE(run("report --config rep.json") == 0);
    CHECK(slurp("cli.out").find("60,lw,identity,20,381,") != std::string::npos);
  }
  SUBCASE("test-only lookback source") {
    REQUIRE(run("backtest --data returns.csv --methods lw --lookback 100 --lookback-source test-only --out bt4") == 0);
    CHECK(lines(slurp("bt4/rolling.csv")) == 1 + 300 - 40 + 1);
  }
}

TEST_CASE("exit codes") {
  write("bad_prices.csv", "date,A,B\n2020-01-02,1.0,2.0\n2020-01-03,0.0,2.1\n");
  write("bad.json", "{ not json");
  write("unknown_key.json", R"({"epochz": 1})");

  CHECK(run("--help") == nnshrink::kExitOk);
  CHECK(run("") == nnshrink::kExitConfig);
  CHECK(run("frobnicate") == nnshrink::kExitConfig);
  CHECK(run("ingest --prices missing.csv --out x.csv") == nnshrink::kExitData);
  CHECK(run("ingest --prices bad_prices.csv --out x.csv") == nnshrink::kExitData);
  CHECK(run("ingest --out x.csv") == nnshrink::kExitConfig);
  CHECK(run("train --data returns.csv --config bad.json --out m.bin") == nnshrink::kExitConfig);
  CHECK(run("train --data returns.csv --config unknown_key.json --out m.bin") == nnshrink::kExitConfig);
  CHECK(run("backtest --data returns.csv --methods lw,magic --out o") == nnshrink::kExitConfig);
  CHECK(run("backtest --data returns.csv --methods nn --out o") == nnshrink::kExitConfig);
  CHECK(run("backtest --data returns.csv --lookback-source sideways --out o") == nnshrink::kExitConfig);
  CHECK(run("report --in nowhere --compare nn,lw") == nnshrink::kExitData);

  write("garbage.bin", "NNSHRINK but truncated");
  CHECK(run("backtest --data returns.csv --methods nn --model garbage.bin --out o") == nnshrink::kExitData);

  // a model whose output is identically zero cannot produce portfolio weights
  auto dead = nnshrink::make_model({.width = 8, .heads = 2, .ff_width = 16, .layers = 1}, 1);
  const auto L = dead.layout();
  std::fill(dead.params.begin() + static_cast<std::ptrdiff_t>(L.w_head), dead.params.end(), 0.0);
  nnshrink::save_model(dead, workdir() / "dead.bin");
  CHECK(run("backtest --data returns.csv --methods nn --model dead.bin --lookback 60 --out o") ==
        nnshrink::kExitNumeric);
}
