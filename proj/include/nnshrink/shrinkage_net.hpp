#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "nnshrink/symmetric_eigen.hpp"
#include "nnshrink/types.hpp"

namespace nnshrink {

struct ModelConfig {
  int width = 32;
  int heads = 4;
  int ff_width = 64;
  int layers = 6;

  bool operator==(const ModelConfig&) const = default;
};

/// Eigenvalues (descending, >= 0) and the aspect ratio c = N / n.
struct ShrinkageInput {
  Vector lambda;
  double c = 0.0;
};

/// Offsets of every parameter tensor inside the flat parameter vector.
/// Matrices are stored column-major with shape (fan_in, fan_out).
struct LayerOffsets {
  std::size_t ln1_gamma, ln1_beta;
  std::size_t w_qkv, b_qkv;
  std::size_t w_out, b_out;
  std::size_t ln2_gamma, ln2_beta;
  std::size_t w_ff1, b_ff1;
  std::size_t w_ff2, b_ff2;
};

struct ParamLayout {
  std::size_t w_embed, b_embed;
  std::vector<LayerOffsets> layers;
  std::size_t lnf_gamma, lnf_beta;
  std::size_t w_head, b_head;
  std::size_t total;

  explicit ParamLayout(const ModelConfig& config);
};

inline constexpr int kTokenFeatures = 3;
inline constexpr double kFeatureLogFloor = 1e-6;
inline constexpr double kLayerNormEps = 1e-5;

/// Transformer over eigenvalue tokens producing nonnegative shrinkage
/// coefficients eta. No positional encoding, so it is permutation-equivariant.
struct ShrinkageModel {
  static constexpr std::uint32_t kSchemaVersion = 1;

  ModelConfig config;
  std::vector<double> params;

  ParamLayout layout() const { return ParamLayout(config); }
};

/// Random init: embeddings and projections ~ N(0, 1/fan_in), residual
/// projections further scaled by 1/sqrt(2 * layers), layer norms at identity,
/// head weights ~ N(0, 0.02^2) and head bias 1 so eta starts at 1/mean(lambda).
ShrinkageModel make_model(const ModelConfig& config, std::uint64_t seed);

/// Per-token features (lambda_i / mean, log(lambda_i / mean + 1e-6), c).
Matrix token_features(const ShrinkageInput& input, double* lambda_mean = nullptr);

struct LayerTrace {
  Matrix input;
  Matrix ln1_hat;
  Vector ln1_rstd;
  Matrix ln1_out;
  Matrix qkv;
  std::vector<Matrix> attention;  // one N x N row-stochastic matrix per head
  Matrix heads_out;
  Matrix mid;
  Matrix ln2_hat;
  Vector ln2_rstd;
  Matrix ln2_out;
  Matrix ff_pre;
};

/// Activations kept for the reverse pass.
struct ForwardTrace {
  Matrix features;
  double lambda_mean = 0.0;
  Matrix embedded;
  std::vector<LayerTrace> layers;
  Matrix final_in;
  Matrix lnf_hat;
  Vector lnf_rstd;
  Matrix lnf_out;
  Vector head;  // pre-ReLU output per token
  Vector eta;
};

ForwardTrace forward_trace(const ShrinkageModel& model, const ShrinkageInput& input);

/// eta = ReLU(head(z)) / mean(lambda). Throws NumericError on non-finite output.
Vector forward(const ShrinkageModel& model, const ShrinkageInput& input);

/// Reverse pass: d loss / d params given d loss / d eta.
std::vector<double> backward(const ShrinkageModel& model, const ForwardTrace& trace,
                             const Vector& d_eta);

struct RiskGradient {
  double loss = 0.0;
  Vector d_eta;
  Vector weights;
};

/// Out-of-sample risk of the portfolio built from (U, eta) and its gradient in eta.
/// Throws NumericError when 1^T P 1 collapses.
RiskGradient risk_loss(const EigenSystem& es, const Vector& eta, const Matrix& validation);

struct GradientBundle {
  double loss = 0.0;
  std::vector<double> grads;
};

GradientBundle loss_and_gradients(const ShrinkageModel& model, const ShrinkageInput& input,
                                  const EigenSystem& es, const Matrix& validation);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline constexpr double kDefaultLearningRate = 1e-4;

void adam_step(ShrinkageModel& model, const GradientBundle& grads, AdamState& state,
               double lr = kDefaultLearningRate, const AdamConfig& adam = {});

void write_model(const ShrinkageModel& model, std::ostream& out);
ShrinkageModel read_model(std::istream& in);
void save_model(const ShrinkageModel& model, const std::filesystem::path& path);
ShrinkageModel load_model(const std::filesystem::path& path);

}  // namespace nnshrink
