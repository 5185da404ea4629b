#include "nnshrink/shrinkage_net.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <random>
#include <string>

#include "nnshrink/errors.hpp"
#include "nnshrink/kernels.hpp"
#include "nnshrink/market_data.hpp"

namespace nnshrink {
namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;
using ConstRow = Eigen::Map<const Eigen::RowVectorXd>;
using MutRow = Eigen::Map<Eigen::RowVectorXd>;

struct Params {
  const double* base;
  ConstMap mat(std::size_t off, int rows, int cols) const { return ConstMap(base + off, rows, cols); }
  ConstRow row(std::size_t off, int cols) const { return ConstRow(base + off, cols); }
};

struct Grads {
  double* base;
  MutMap mat(std::size_t off, int rows, int cols) const { return MutMap(base + off, rows, cols); }
  MutRow row(std::size_t off, int cols) const { return MutRow(base + off, cols); }
};

void check_config(const ModelConfig& c) {
  if (c.width < 1 || c.heads < 1 || c.ff_width < 1 || c.layers < 0)
    throw ConfigError("model dimensions must be positive");
  if (c.width % c.heads != 0) throw ConfigError("model width must be divisible by the head count");
}

// Row-wise layer norm: hat = (x - mean) * rstd, out = hat * gamma + beta.
void layer_norm(const Matrix& x, ConstRow gamma, ConstRow beta, Matrix& hat, Vector& rstd, Matrix& out) {
  const Eigen::Index d = x.cols();
  const Vector mean = x.rowwise().mean();
  hat = x.colwise() - mean;
  rstd = (hat.array().square().rowwise().sum() / static_cast<double>(d) + kLayerNormEps).rsqrt();
  hat = hat.array().colwise() * rstd.array();
  out = (hat.array().rowwise() * gamma.array()).rowwise() + beta.array();
}

Matrix layer_norm_backward(const Matrix& d_out, const Matrix& hat, const Vector& rstd, ConstRow gamma,
                           MutRow g_gamma, MutRow g_beta) {
  g_gamma += (d_out.array() * hat.array()).colwise().sum().matrix();
  g_beta += d_out.colwise().sum();
  const Matrix d_hat = d_out.array().rowwise() * gamma.array();
  const Vector mean_dhat = d_hat.rowwise().mean();
  const Vector mean_dhat_hat = (d_hat.array() * hat.array()).rowwise().mean();
  Matrix dx = (d_hat - hat.cwiseProduct(mean_dhat_hat.replicate(1, hat.cols()))).colwise() - mean_dhat;
  return dx.array().colwise() * rstd.array();
}

constexpr double kGeluK = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluC = 0.044715;

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluK * (x + kGeluC * x * x * x))); }

double gelu_grad(double x) {
  const double th = std::tanh(kGeluK * (x + kGeluC * x * x * x));
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluK * (1.0 + 3.0 * kGeluC * x * x);
}

void softmax_rows(Matrix& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
}

}  // namespace

ParamLayout::ParamLayout(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.width);
  const auto f = static_cast<std::size_t>(c.ff_width);
  std::size_t off = 0;
  auto take = [&off](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  w_embed = take(kTokenFeatures * d);
  b_embed = take(d);
  layers.resize(static_cast<std::size_t>(std::max(c.layers, 0)));
  for (auto& l : layers) {
    l.ln1_gamma = take(d);
    l.ln1_beta = take(d);
    l.w_qkv = take(d * 3 * d);
    l.b_qkv = take(3 * d);
    l.w_out = take(d * d);
    l.b_out = take(d);
    l.ln2_gamma = take(d);
    l.ln2_beta = take(d);
    l.w_ff1 = take(d * f);
    l.b_ff1 = take(f);
    l.w_ff2 = take(f * d);
    l.b_ff2 = take(d);
  }
  lnf_gamma = take(d);
  lnf_beta = take(d);
  w_head = take(d);
  b_head = take(1);
  total = off;
}

ShrinkageModel make_model(const ModelConfig& config, std::uint64_t seed) {
  check_config(config);
  const ParamLayout L(config);
  ShrinkageModel model{config, std::vector<double>(L.total, 0.0)};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](std::size_t off, std::size_t count, double sd) {
    for (std::size_t i = 0; i < count; ++i) model.params[off + i] = sd * normal(rng);
  };
  auto ones = [&](std::size_t off, std::size_t count) {
    std::fill_n(model.params.begin() + static_cast<std::ptrdiff_t>(off), count, 1.0);
  };
  const auto d = static_cast<std::size_t>(config.width);
  const auto f = static_cast<std::size_t>(config.ff_width);
  const double resid = 1.0 / std::sqrt(2.0 * std::max(config.layers, 1));

  fill(L.w_embed, kTokenFeatures * d, 1.0 / std::sqrt(double(kTokenFeatures)));
  for (const auto& l : L.layers) {
    ones(l.ln1_gamma, d);
    fill(l.w_qkv, 3 * d * d, 1.0 / std::sqrt(double(d)));
    fill(l.w_out, d * d, resid / std::sqrt(double(d)));
    ones(l.ln2_gamma, d);
    fill(l.w_ff1, d * f, 1.0 / std::sqrt(double(d)));
    fill(l.w_ff2, f * d, resid / std::sqrt(double(f)));
  }
  ones(L.lnf_gamma, d);
  fill(L.w_head, d, 0.02);
  model.params[L.b_head] = 1.0;
  return model;
}

Matrix token_features(const ShrinkageInput& input, double* lambda_mean) {
  const Eigen::Index N = input.lambda.size();
  if (N < 1) throw DataError("shrinkage input needs at least one eigenvalue");
  if (!(input.c > 0.0) || !std::isfinite(input.c)) throw DataError("shrinkage input needs c > 0");
  if (!input.lambda.allFinite() || input.lambda.minCoeff() < 0.0)
    throw DataError("eigenvalues must be finite and nonnegative");
  const double mean = input.lambda.mean();
  if (!(mean > 0.0)) throw DataError("eigenvalues are all zero");
  Matrix f(N, kTokenFeatures);
  for (Eigen::Index i = 0; i < N; ++i) {
    const double r = input.lambda(i) / mean;
    f(i, 0) = r;
    f(i, 1) = std::log(r + kFeatureLogFloor);
    f(i, 2) = input.c;
  }
  if (lambda_mean) *lambda_mean = mean;
  return f;
}

ForwardTrace forward_trace(const ShrinkageModel& model, const ShrinkageInput& input) {
  const ModelConfig& c = model.config;
  check_config(c);
  const ParamLayout L(c);
  if (model.params.size() != L.total) throw DataError("model parameter count does not match its config");
  const Params P{model.params.data()};
  const int d = c.width;
  const int dh = d / c.heads;
  const double att_scale = 1.0 / std::sqrt(double(dh));

  ForwardTrace tr;
  tr.features = token_features(input, &tr.lambda_mean);
  tr.embedded = (tr.features * P.mat(L.w_embed, kTokenFeatures, d)).rowwise() + P.row(L.b_embed, d);

  Matrix x = tr.embedded;
  tr.layers.resize(L.layers.size());
  for (std::size_t li = 0; li < L.layers.size(); ++li) {
    const LayerOffsets& o = L.layers[li];
    LayerTrace& lt = tr.layers[li];
    lt.input = x;
    layer_norm(x, P.row(o.ln1_gamma, d), P.row(o.ln1_beta, d), lt.ln1_hat, lt.ln1_rstd, lt.ln1_out);
    lt.qkv = (lt.ln1_out * P.mat(o.w_qkv, d, 3 * d)).rowwise() + P.row(o.b_qkv, 3 * d);
    lt.heads_out.resize(x.rows(), d);
    lt.attention.resize(static_cast<std::size_t>(c.heads));
    for (int h = 0; h < c.heads; ++h) {
      const auto q = lt.qkv.middleCols(h * dh, dh);
      const auto k = lt.qkv.middleCols(d + h * dh, dh);
      const auto v = lt.qkv.middleCols(2 * d + h * dh, dh);
      Matrix& a = lt.attention[static_cast<std::size_t>(h)];
      a = att_scale * (q * k.transpose());
      softmax_rows(a);
      lt.heads_out.middleCols(h * dh, dh) = a * v;
    }
    lt.mid = x + ((lt.heads_out * P.mat(o.w_out, d, d)).rowwise() + P.row(o.b_out, d));
    layer_norm(lt.mid, P.row(o.ln2_gamma, d), P.row(o.ln2_beta, d), lt.ln2_hat, lt.ln2_rstd, lt.ln2_out);
    lt.ff_pre = (lt.ln2_out * P.mat(o.w_ff1, d, c.ff_width)).rowwise() + P.row(o.b_ff1, c.ff_width);
    const Matrix act = lt.ff_pre.unaryExpr(&gelu);
    x = lt.mid + ((act * P.mat(o.w_ff2, c.ff_width, d)).rowwise() + P.row(o.b_ff2, d));
  }
  tr.final_in = x;
  layer_norm(x, P.row(L.lnf_gamma, d), P.row(L.lnf_beta, d), tr.lnf_hat, tr.lnf_rstd, tr.lnf_out);
  tr.head = (tr.lnf_out * P.mat(L.w_head, d, 1)).col(0).array() + model.params[L.b_head];
  tr.eta = tr.head.cwiseMax(0.0) / tr.lambda_mean;
  if (!tr.eta.allFinite()) throw NumericError("shrinkage network produced non-finite output");
  return tr;
}

Vector forward(const ShrinkageModel& model, const ShrinkageInput& input) {
  return forward_trace(model, input).eta;
}

std::vector<double> backward(const ShrinkageModel& model, const ForwardTrace& tr, const Vector& d_eta) {
  const ModelConfig& c = model.config;
  const ParamLayout L(c);
  const Params P{model.params.data()};
  std::vector<double> grads(L.total, 0.0);
  const Grads G{grads.data()};
  const int d = c.width;
  const int f = c.ff_width;
  const int dh = d / c.heads;
  const double att_scale = 1.0 / std::sqrt(double(dh));

  if (d_eta.size() != tr.eta.size()) throw DataError("backward: d_eta length mismatch");
  Vector d_head(d_eta.size());
  for (Eigen::Index i = 0; i < d_eta.size(); ++i)
    d_head(i) = tr.head(i) > 0.0 ? d_eta(i) / tr.lambda_mean : 0.0;

  G.mat(L.w_head, d, 1) += tr.lnf_out.transpose() * d_head;
  grads[L.b_head] += d_head.sum();
  const Matrix d_lnf = d_head * P.row(L.w_head, d);
  Matrix dx = layer_norm_backward(d_lnf, tr.lnf_hat, tr.lnf_rstd, P.row(L.lnf_gamma, d),
                                  G.row(L.lnf_gamma, d), G.row(L.lnf_beta, d));

  for (std::size_t li = L.layers.size(); li-- > 0;) {
    const LayerOffsets& o = L.layers[li];
    const LayerTrace& lt = tr.layers[li];

    // Feed-forward branch: x_out = mid + W2 gelu(W1 ln2(mid)).
    const Matrix act = lt.ff_pre.unaryExpr(&gelu);
    G.mat(o.w_ff2, f, d) += act.transpose() * dx;
    G.row(o.b_ff2, d) += dx.colwise().sum();
    const Matrix d_pre = (dx * P.mat(o.w_ff2, f, d).transpose()).cwiseProduct(lt.ff_pre.unaryExpr(&gelu_grad));
    G.mat(o.w_ff1, d, f) += lt.ln2_out.transpose() * d_pre;
    G.row(o.b_ff1, f) += d_pre.colwise().sum();
    const Matrix d_ln2 = d_pre * P.mat(o.w_ff1, d, f).transpose();
    Matrix d_mid = dx + layer_norm_backward(d_ln2, lt.ln2_hat, lt.ln2_rstd, P.row(o.ln2_gamma, d),
                                            G.row(o.ln2_gamma, d), G.row(o.ln2_beta, d));

    // Attention branch: mid = input + Wo attn(ln1(input)).
    G.mat(o.w_out, d, d) += lt.heads_out.transpose() * d_mid;
    G.row(o.b_out, d) += d_mid.colwise().sum();
    const Matrix d_heads = d_mid * P.mat(o.w_out, d, d).transpose();
    Matrix d_qkv(lt.qkv.rows(), 3 * d);
    for (int h = 0; h < c.heads; ++h) {
      const Matrix& a = lt.attention[static_cast<std::size_t>(h)];
      const auto q = lt.qkv.middleCols(h * dh, dh);
      const auto k = lt.qkv.middleCols(d + h * dh, dh);
      const auto v = lt.qkv.middleCols(2 * d + h * dh, dh);
      const auto d_o = d_heads.middleCols(h * dh, dh);
      d_qkv.middleCols(2 * d + h * dh, dh) = a.transpose() * d_o;
      const Matrix d_a = d_o * v.transpose();
      const Vector row_dot = (d_a.array() * a.array()).rowwise().sum();
      const Matrix d_s = a.array() * (d_a.colwise() - row_dot).array();
      d_qkv.middleCols(h * dh, dh) = att_scale * (d_s * k);
      d_qkv.middleCols(d + h * dh, dh) = att_scale * (d_s.transpose() * q);
    }
    G.mat(o.w_qkv, d, 3 * d) += lt.ln1_out.transpose() * d_qkv;
    G.row(o.b_qkv, 3 * d) += d_qkv.colwise().sum();
    const Matrix d_ln1 = d_qkv * P.mat(o.w_qkv, d, 3 * d).transpose();
    dx = d_mid + layer_norm_backward(d_ln1, lt.ln1_hat, lt.ln1_rstd, P.row(o.ln1_gamma, d),
                                     G.row(o.ln1_gamma, d), G.row(o.ln1_beta, d));
  }

  G.mat(L.w_embed, kTokenFeatures, d) += tr.features.transpose() * dx;
  G.row(L.b_embed, d) += dx.colwise().sum();
  return grads;
}

RiskGradient risk_loss(const EigenSystem& es, const Vector& eta, const Matrix& validation) {
  const Eigen::Index N = eta.size();
  if (es.vectors.rows() != N || es.vectors.cols() != N || validation.rows() != N)
    throw DataError("risk_loss: shape mismatch");
  if (validation.cols() < 1) throw DataError("risk_loss: validation needs at least one column");

  const Matrix& u = es.vectors;
  const Vector a = u.transpose() * Vector::Ones(N);
  const Vector v = u * eta.cwiseProduct(a);
  const double s = eta.dot(a.cwiseAbs2());
  const double eta_max = eta.size() ? eta.maxCoeff() : 0.0;
  if (!(s > 1e-12 * eta_max * static_cast<double>(N)))
    throw NumericError("shrinkage coefficients collapsed: 1^T P 1 is not positive");

  const Matrix cov = kernels::scatter(center_columns(validation), 1.0 / static_cast<double>(validation.cols()));
  RiskGradient out;
  out.weights = v / s;
  const Vector g = 2.0 * (cov * out.weights);
  out.loss = 0.5 * out.weights.dot(g);
  const Vector d_v = (g.array() - g.dot(out.weights)) / s;
  out.d_eta = a.cwiseProduct(u.transpose() * d_v);
  return out;
}

GradientBundle loss_and_gradients(const ShrinkageModel& model, const ShrinkageInput& input,
                                  const EigenSystem& es, const Matrix& validation) {
  if (es.values.size() != input.lambda.size())
    throw DataError("loss_and_gradients: eigensystem does not match the input eigenvalues");
  const ForwardTrace tr = forward_trace(model, input);
  const RiskGradient rg = risk_loss(es, tr.eta, validation);
  return {rg.loss, backward(model, tr, rg.d_eta)};
}

void adam_step(ShrinkageModel& model, const GradientBundle& grads, AdamState& state, double lr,
               const AdamConfig& adam) {
  const std::size_t n = model.params.size();
  if (grads.grads.size() != n) throw DataError("adam_step: gradient shape does not match the model");
  if (state.m.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
    state.step = 0;
  }
  if (state.m.size() != n || state.v.size() != n) throw DataError("adam_step: optimizer state shape mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads.grads[i];
    state.m[i] = adam.beta1 * state.m[i] + (1.0 - adam.beta1) * g;
    state.v[i] = adam.beta2 * state.v[i] + (1.0 - adam.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    model.params[i] -= lr * m_hat / (std::sqrt(v_hat) + adam.eps);
  }
}

// Model file, little-endian:
//   char[8]  magic "NNSHRINK"
//   u32      schema_version
//   u32      width, heads, ff_width, layers
//   u64      parameter count
//   f64[]    parameters in ParamLayout order
//   u32      CRC-32 of every preceding byte
namespace {

constexpr char kMagic[8] = {'N', 'N', 'S', 'H', 'R', 'I', 'N', 'K'};
static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

template <class T>
void put(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

template <class T>
T get(const std::string& buf, std::size_t& at) {
  if (at + sizeof(T) > buf.size()) throw ModelFileError("model file is truncated");
  T v;
  std::memcpy(&v, buf.data() + at, sizeof(T));
  at += sizeof(T);
  return v;
}

std::uint32_t crc(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace

void write_model(const ShrinkageModel& model, std::ostream& out) {
  std::string buf(kMagic, sizeof kMagic);
  put<std::uint32_t>(buf, ShrinkageModel::kSchemaVersion);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(model.config.width));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(model.config.heads));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(model.config.ff_width));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(model.config.layers));
  put<std::uint64_t>(buf, model.params.size());
  for (double p : model.params) put<double>(buf, p);
  put<std::uint32_t>(buf, crc(buf.data(), buf.size()));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("failed writing model file");
}

ShrinkageModel read_model(std::istream& in) {
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kMagic || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
    throw ModelFileError("not a shrinkage model file");
  if (buf.size() < sizeof kMagic + 4 + 16 + 8 + 4) throw ModelFileError("model file is truncated");
  std::uint32_t stored = 0;
  std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
  if (stored != crc(buf.data(), buf.size() - 4)) throw ModelFileError("model file checksum mismatch");

  std::size_t at = sizeof kMagic;
  const auto version = get<std::uint32_t>(buf, at);
  if (version != ShrinkageModel::kSchemaVersion)
    throw ModelFileError("unsupported model schema version " + std::to_string(version));
  ShrinkageModel model;
  model.config.width = static_cast<int>(get<std::uint32_t>(buf, at));
  model.config.heads = static_cast<int>(get<std::uint32_t>(buf, at));
  model.config.ff_width = static_cast<int>(get<std::uint32_t>(buf, at));
  model.config.layers = static_cast<int>(get<std::uint32_t>(buf, at));
  try {
    check_config(model.config);
  } catch (const ConfigError& e) {
    throw ModelFileError(std::string("model file has invalid dimensions: ") + e.what());
  }
  const auto count = get<std::uint64_t>(buf, at);
  if (count != ParamLayout(model.config).total || at + count * 8 + 4 != buf.size())
    throw ModelFileError("model parameter count does not match its dimensions");
  model.params.resize(count);
  for (auto& p : model.params) p = get<double>(buf, at);
  return model;
}

void save_model(const ShrinkageModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_model(model, out);
}

ShrinkageModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_model(in);
}

}  // namespace nnshrink
