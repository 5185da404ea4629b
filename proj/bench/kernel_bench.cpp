// Serial reference kernels vs the OpenMP versions the library uses.
// Set OMP_NUM_THREADS to vary the parallel side.
#include <benchmark/benchmark.h>

#include "nnshrink/backtest.hpp"
#include "nnshrink/kernels.hpp"
#include "nnshrink/synthetic.hpp"
#include "nnshrink/trainer.hpp"

using namespace nnshrink;

namespace {

Matrix data(std::int64_t n_assets, std::int64_t days) {
  synthetic::Rng rng(1);
  return synthetic::gaussian_matrix(static_cast<std::size_t>(n_assets), static_cast<std::size_t>(days), rng);
}

template <bool Parallel>
void BM_scatter(benchmark::State& state) {
  const Matrix x = data(state.range(0), state.range(1));
  for (auto _ : state)
    benchmark::DoNotOptimize(Parallel ? kernels::scatter(x, 1.0) : kernels::reference::scatter(x, 1.0));
}

template <bool Parallel>
void BM_outer_deviation_sum(benchmark::State& state) {
  const Matrix x = data(state.range(0), state.range(1));
  const Matrix s = kernels::scatter(x, 1.0 / double(x.cols()));
  for (auto _ : state)
    benchmark::DoNotOptimize(Parallel ? kernels::outer_deviation_sum(x, s)
                                      : kernels::reference::outer_deviation_sum(x, s));
}

template <bool Parallel>
void BM_column_quadratic_forms(benchmark::State& state) {
  const Matrix x = data(state.range(0), state.range(1));
  const Matrix a = kernels::scatter(x, 1.0 / double(x.cols()));
  for (auto _ : state)
    benchmark::DoNotOptimize(Parallel ? kernels::column_quadratic_forms(x, a)
                                      : kernels::reference::column_quadratic_forms(x, a));
}

template <Execution Exec>
void BM_batch_gradients(benchmark::State& state) {
  synthetic::Rng rng(2);
  ReturnsMatrix r;
  r.returns = synthetic::gaussian_matrix(50, 600, rng);
  r.assets.assign(50, "A");
  r.dates.assign(600, "d");
  TrainConfig cfg;
  Rng batch_rng(3);
  std::vector<PreparedSample> batch;
  for (const auto& s : sample_batch(r, cfg, {0, 600}, batch_rng)) batch.push_back(prepare_sample(s, cfg.lw_formula));
  const ShrinkageModel model = make_model(cfg.model, 4);
  for (auto _ : state) benchmark::DoNotOptimize(batch_gradients(model, batch, Exec));
}

template <Execution Exec>
void BM_backtest(benchmark::State& state) {
  synthetic::Rng rng(5);
  ReturnsMatrix r;
  r.returns = synthetic::gaussian_matrix(50, 800, rng) * 0.01;
  for (int i = 0; i < 50; ++i) r.assets.push_back("A" + std::to_string(i));
  r.dates = synthetic::weekday_dates("2000-01-03", 800);
  BacktestConfig cfg;
  cfg.lookbacks = {60, 250};
  for (auto _ : state) benchmark::DoNotOptimize(run_backtest(r, cfg, nullptr, Exec));
}

}  // namespace

BENCHMARK(BM_scatter<false>)->Args({50, 250})->Args({200, 1000})->Name("scatter/serial");
BENCHMARK(BM_scatter<true>)->Args({50, 250})->Args({200, 1000})->Name("scatter/omp");
BENCHMARK(BM_outer_deviation_sum<false>)->Args({50, 250})->Args({200, 1000})->Name("outer_deviation_sum/serial");
BENCHMARK(BM_outer_deviation_sum<true>)->Args({50, 250})->Args({200, 1000})->Name("outer_deviation_sum/omp");
BENCHMARK(BM_column_quadratic_forms<false>)->Args({50, 250})->Args({200, 1000})->Name("quadratic_forms/serial");
BENCHMARK(BM_column_quadratic_forms<true>)->Args({50, 250})->Args({200, 1000})->Name("quadratic_forms/omp");
BENCHMARK(BM_batch_gradients<Execution::Serial>)->Name("batch_gradients/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_batch_gradients<Execution::Parallel>)->Name("batch_gradients/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_backtest<Execution::Serial>)->Name("backtest/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_backtest<Execution::Parallel>)->Name("backtest/omp")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
