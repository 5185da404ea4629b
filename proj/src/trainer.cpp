#include "nnshrink/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <optional>
#include <ostream>

#include <json.hpp>

#include "nnshrink/errors.hpp"

namespace nnshrink {
namespace {

using nlohmann::json;

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cfg.batches_per_epoch < 1) throw ConfigError("batches_per_epoch must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (cfg.n_min < 2 || cfg.n_min > cfg.n_max) throw ConfigError("need 2 <= n_min <= n_max");
  if (cfg.assets_min < 1 || cfg.assets_min > cfg.assets_max) throw ConfigError("need 1 <= assets_min <= assets_max");
  if (cfg.m < 1) throw ConfigError("m must be >= 1");
  if (cfg.patience < 1) throw ConfigError("patience must be >= 1");
  if (cfg.validation_fraction < 0.0 || cfg.validation_fraction >= 1.0)
    throw ConfigError("validation_fraction must lie in [0, 1)");
}

template <class T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

TrainSample draw_sample(const ReturnsMatrix& r, const TrainConfig& cfg, std::size_t first_target,
                        std::size_t last_target, std::size_t min_start, Rng& rng, std::size_t n) {
  const std::size_t max_assets = std::min(cfg.assets_max, r.n_assets());
  const std::size_t n_assets = uniform(rng, cfg.assets_min, max_assets);
  std::vector<std::size_t> idx = all_assets(r.n_assets());
  for (std::size_t i = 0; i < n_assets; ++i) std::swap(idx[i], idx[uniform(rng, i, idx.size() - 1)]);
  idx.resize(n_assets);
  std::sort(idx.begin(), idx.end());

  const std::size_t lo = std::max(first_target, min_start + n);
  const std::size_t target = uniform(rng, lo, last_target);
  const WindowSlices w = slice_window(r, {target - n, n, cfg.m, idx});
  return {w.in_sample, w.validation, static_cast<double>(n_assets) / static_cast<double>(n)};
}

template <class F>
void for_each_index(std::size_t count, Execution exec, F&& body) {
  std::vector<std::exception_ptr> errors(count);
  const auto n = static_cast<std::ptrdiff_t>(count);
  if (exec == Execution::Parallel) {
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      try {
        body(static_cast<std::size_t>(i));
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      try {
        body(static_cast<std::size_t>(i));
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<PreparedSample> prepare_all(const std::vector<TrainSample>& samples, LwFormula formula) {
  std::vector<PreparedSample> out(samples.size());
  for_each_index(samples.size(), Execution::Parallel,
                 [&](std::size_t i) { out[i] = prepare_sample(samples[i], formula); });
  return out;
}

}  // namespace

TrainConfig train_config_from_json(const std::string& text) {
  TrainConfig cfg;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid training config JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  static const std::vector<std::string> known{
      "epochs", "batches_per_epoch", "batch_size", "learning_rate", "n_min", "n_max", "assets_min",
      "assets_max", "m", "seed", "patience", "validation_fraction", "validation_samples", "test_days",
      "lw_formula", "model"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown training config key '" + key + "'");
  try {
    read_field(j, "epochs", cfg.epochs);
    read_field(j, "batches_per_epoch", cfg.batches_per_epoch);
    read_field(j, "batch_size", cfg.batch_size);
    read_field(j, "learning_rate", cfg.learning_rate);
    read_field(j, "n_min", cfg.n_min);
    read_field(j, "n_max", cfg.n_max);
    read_field(j, "assets_min", cfg.assets_min);
    read_field(j, "assets_max", cfg.assets_max);
    read_field(j, "m", cfg.m);
    read_field(j, "seed", cfg.seed);
    read_field(j, "patience", cfg.patience);
    read_field(j, "validation_fraction", cfg.validation_fraction);
    read_field(j, "validation_samples", cfg.validation_samples);
    read_field(j, "test_days", cfg.test_days);
    if (j.contains("lw_formula")) cfg.lw_formula = parse_lw_formula(j.at("lw_formula").get<std::string>());
    if (j.contains("model")) {
      const json& mj = j.at("model");
      read_field(mj, "width", cfg.model.width);
      read_field(mj, "heads", cfg.model.heads);
      read_field(mj, "ff_width", cfg.model.ff_width);
      read_field(mj, "layers", cfg.model.layers);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad training config value: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json j{{"epochs", cfg.epochs},
         {"batches_per_epoch", cfg.batches_per_epoch},
         {"batch_size", cfg.batch_size},
         {"learning_rate", cfg.learning_rate},
         {"n_min", cfg.n_min},
         {"n_max", cfg.n_max},
         {"assets_min", cfg.assets_min},
         {"assets_max", cfg.assets_max},
         {"m", cfg.m},
         {"seed", cfg.seed},
         {"patience", cfg.patience},
         {"validation_fraction", cfg.validation_fraction},
         {"validation_samples", cfg.validation_samples},
         {"test_days", cfg.test_days},
         {"lw_formula", std::string(to_string(cfg.lw_formula))},
         {"model",
          {{"width", cfg.model.width},
           {"heads", cfg.model.heads},
           {"ff_width", cfg.model.ff_width},
           {"layers", cfg.model.layers}}}};
  return j.dump(2);
}

std::vector<TrainSample> sample_batch(const ReturnsMatrix& r, const TrainConfig& cfg, ColumnRange range,
                                      Rng& rng) {
  validate(cfg);
  if (range.end > r.n_days() || range.begin > range.end) throw ConfigError("sampling range outside the data");
  if (range.end - range.begin < cfg.n_max + cfg.m)
    throw ConfigError("training range is shorter than n_max + m");
  if (cfg.assets_min > r.n_assets()) throw ConfigError("assets_min exceeds the asset universe");
  std::vector<TrainSample> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (int b = 0; b < cfg.batch_size; ++b) {
    const std::size_t n = uniform(rng, cfg.n_min, cfg.n_max);
    batch.push_back(draw_sample(r, cfg, range.begin + n, range.end - cfg.m, range.begin, rng, n));
  }
  return batch;
}

PreparedSample prepare_sample(const TrainSample& s, LwFormula formula) {
  const CovarianceEstimate lw = ledoit_wolf(s.in_sample, formula);
  EigenSystem es = eigh(lw.matrix);
  ShrinkageInput input{es.values.cwiseMax(0.0), s.c};
  return {std::move(input), std::move(es), s.validation};
}

BatchGradients batch_gradients(const ShrinkageModel& model, const std::vector<PreparedSample>& batch,
                               Execution exec) {
  std::vector<std::optional<GradientBundle>> per(batch.size());
  for_each_index(batch.size(), exec, [&](std::size_t i) {
    try {
      per[i] = loss_and_gradients(model, batch[i].input, batch[i].es, batch[i].validation);
    } catch (const NumericError&) {
      per[i].reset();
    }
  });

  BatchGradients out;
  out.mean.grads.assign(model.params.size(), 0.0);
  for (const auto& g : per) {  // fixed order keeps the sum reproducible
    if (!g) {
      ++out.skipped;
      continue;
    }
    ++out.used;
    out.mean.loss += g->loss;
    for (std::size_t k = 0; k < g->grads.size(); ++k) out.mean.grads[k] += g->grads[k];
  }
  if (out.used > 0) {
    const double inv = 1.0 / static_cast<double>(out.used);
    out.mean.loss *= inv;
    for (auto& g : out.mean.grads) g *= inv;
  }
  return out;
}

StepResult train_step(ShrinkageModel& model, const std::vector<TrainSample>& batch, AdamState& state,
                      const TrainConfig& cfg) {
  const BatchGradients bg = batch_gradients(model, prepare_all(batch, cfg.lw_formula));
  StepResult res;
  res.skipped = bg.skipped;
  if (bg.used == 0) {
    res.mean_loss = std::numeric_limits<double>::quiet_NaN();
    return res;
  }
  if (!std::isfinite(bg.mean.loss)) throw NumericError("training loss is not finite");
  res.mean_loss = bg.mean.loss;
  double sq = 0.0;
  for (double g : bg.mean.grads) sq += g * g;
  res.grad_norm = std::sqrt(sq);
  adam_step(model, bg.mean, state, cfg.learning_rate);
  return res;
}

double evaluate_loss(const ShrinkageModel& model, const std::vector<PreparedSample>& samples,
                     std::size_t* skipped) {
  std::vector<std::optional<double>> losses(samples.size());
  for_each_index(samples.size(), Execution::Parallel, [&](std::size_t i) {
    try {
      const Vector eta = forward(model, samples[i].input);
      losses[i] = risk_loss(samples[i].es, eta, samples[i].validation).loss;
    } catch (const NumericError&) {
      losses[i].reset();
    }
  });
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& l : losses)
    if (l) {
      sum += *l;
      ++used;
    }
  if (skipped) *skipped = samples.size() - used;
  return used ? sum / static_cast<double>(used) : std::numeric_limits<double>::infinity();
}

TrainSplit train_split(std::size_t n_days, const TrainConfig& cfg) {
  if (cfg.test_days >= n_days) throw ConfigError("test_days leaves no training data");
  const std::size_t train_end = n_days - cfg.test_days;
  const auto val_len = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(train_end)));
  return {{0, train_end - val_len}, {train_end - val_len, train_end}};
}

TrainResult train(const ReturnsMatrix& r, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  validate(cfg);
  const TrainSplit split = train_split(r.n_days(), cfg);
  if (split.train.end - split.train.begin < cfg.n_max + cfg.m)
    throw ConfigError("training split is shorter than n_max + m");
  if (cfg.assets_min > r.n_assets()) throw ConfigError("assets_min exceeds the asset universe");

  TrainResult result{make_model(cfg.model, cfg.seed + 2), {}, 0};
  if (cfg.epochs == 0) return result;

  std::vector<PreparedSample> held_out;
  const bool has_validation = split.validation.end > split.validation.begin && cfg.validation_samples > 0;
  if (has_validation) {
    if (split.validation.end - split.validation.begin < cfg.m || split.validation.end < cfg.n_max + cfg.m)
      throw ConfigError("validation split cannot hold an m-day target");
    Rng vrng(cfg.seed + 1);
    std::vector<TrainSample> raw;
    for (std::size_t k = 0; k < cfg.validation_samples; ++k) {
      const std::size_t n = uniform(vrng, cfg.n_min, cfg.n_max);
      raw.push_back(draw_sample(r, cfg, split.validation.begin, split.validation.end - cfg.m, 0, vrng, n));
    }
    held_out = prepare_all(raw, cfg.lw_formula);
  }

  ShrinkageModel model = result.model;
  double best = has_validation ? evaluate_loss(model, held_out) : std::numeric_limits<double>::infinity();
  AdamState state;
  Rng rng(cfg.seed);
  int stale = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    int steps = 0;
    std::size_t skipped = 0;
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
      const StepResult s = train_step(model, sample_batch(r, cfg, split.train, rng), state, cfg);
      skipped += s.skipped;
      if (std::isfinite(s.mean_loss)) {
        loss_sum += s.mean_loss;
        ++steps;
      }
    }
    if (steps == 0) throw NumericError("every training sample collapsed during an epoch");

    EpochLog entry{epoch, loss_sum / steps, std::numeric_limits<double>::quiet_NaN(), skipped};
    if (has_validation) entry.mean_val_loss = evaluate_loss(model, held_out);
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);

    if (!has_validation) {
      result.model = model;
      result.best_epoch = epoch;
    } else if (entry.mean_val_loss < best) {
      best = entry.mean_val_loss;
      result.model = model;
      result.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return result;
}

void write_train_log(const std::vector<EpochLog>& log, std::ostream& out) {
  out << "epoch,mean_train_loss,mean_val_loss,skipped_samples\n";
  for (const auto& e : log)
    out << e.epoch << ',' << format_double(e.mean_train_loss) << ',' << format_double(e.mean_val_loss) << ','
        << e.skipped_samples << '\n';
}

PrecisionEstimate nn_precision(const ShrinkageModel& model, const Matrix& in_sample, LwFormula formula) {
  const CovarianceEstimate lw = ledoit_wolf(in_sample, formula);
  const EigenSystem es = eigh(lw.matrix);
  const ShrinkageInput input{es.values.cwiseMax(0.0),
                             static_cast<double>(in_sample.rows()) / static_cast<double>(in_sample.cols())};
  return reconstruct_precision(es, forward(model, input));
}

}  // namespace nnshrink
