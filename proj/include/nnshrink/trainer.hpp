#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <vector>

#include "nnshrink/estimators.hpp"
#include "nnshrink/market_data.hpp"
#include "nnshrink/shrinkage_net.hpp"

namespace nnshrink {

struct TrainConfig {
  int epochs = 50;
  int batches_per_epoch = 100;
  int batch_size = 8;
  double learning_rate = kDefaultLearningRate;
  std::size_t n_min = 40, n_max = 250;
  std::size_t assets_min = 20, assets_max = 50;
  std::size_t m = 20;
  std::uint64_t seed = 42;
  int patience = 10;
  double validation_fraction = 0.1;
  std::size_t validation_samples = 32;
  std::size_t test_days = 400;  // trailing columns never seen by training
  LwFormula lw_formula = LwFormula::Standard;
  ModelConfig model;
};

/// Reads any subset of the TrainConfig fields from a JSON object.
TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);

struct TrainSample {
  Matrix in_sample;   // N x n
  Matrix validation;  // N x m
  double c = 0.0;     // N / n
};

/// Half-open column range [begin, end).
struct ColumnRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

using Rng = std::mt19937_64;

/// Draws batch_size windows whose in-sample and validation columns both lie in
/// `range`; n, N, the asset subset and the start are uniform.
std::vector<TrainSample> sample_batch(const ReturnsMatrix& r, const TrainConfig& cfg,
                                      ColumnRange range, Rng& rng);

/// A sample after the LW -> eigh stage, ready for the network.
struct PreparedSample {
  ShrinkageInput input;
  EigenSystem es;
  Matrix validation;
};

PreparedSample prepare_sample(const TrainSample& s, LwFormula formula);

struct BatchGradients {
  GradientBundle mean;  // loss and grads averaged over used samples
  std::size_t used = 0;
  std::size_t skipped = 0;
};

BatchGradients batch_gradients(const ShrinkageModel& model, const std::vector<PreparedSample>& batch,
                               Execution exec = Execution::Parallel);

struct StepResult {
  double mean_loss = 0.0;
  std::size_t skipped = 0;
  double grad_norm = 0.0;
};

StepResult train_step(ShrinkageModel& model, const std::vector<TrainSample>& batch,
                      AdamState& state, const TrainConfig& cfg);

/// Mean risk loss without updating anything; skipped samples excluded.
double evaluate_loss(const ShrinkageModel& model, const std::vector<PreparedSample>& samples,
                     std::size_t* skipped = nullptr);

struct EpochLog {
  int epoch = 0;
  double mean_train_loss = 0.0;
  double mean_val_loss = 0.0;
  std::size_t skipped_samples = 0;
};

struct TrainResult {
  ShrinkageModel model;
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

struct TrainSplit {
  ColumnRange train;       // training windows live entirely here
  ColumnRange validation;  // validation targets live here; lookback may precede it
};

TrainSplit train_split(std::size_t n_days, const TrainConfig& cfg);

using EpochCallback = std::function<void(const EpochLog&)>;

/// Returns the parameters with the lowest held-out validation loss.
TrainResult train(const ReturnsMatrix& r, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

void write_train_log(const std::vector<EpochLog>& log, std::ostream& out);

/// LW -> eigh -> network -> sum eta_i u_i u_i^T for one in-sample window.
PrecisionEstimate nn_precision(const ShrinkageModel& model, const Matrix& in_sample,
                               LwFormula formula = LwFormula::Standard);

}  // namespace nnshrink
