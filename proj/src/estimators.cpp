#include "nnshrink/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nnshrink/kernels.hpp"
#include "nnshrink/market_data.hpp"

namespace nnshrink {

std::string_view to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::SCM: return "scm";
    case EstimatorKind::LW: return "lw";
    case EstimatorKind::Chen: return "chen";
    case EstimatorKind::Identity: return "identity";
  }
  return "unknown";
}

LwFormula parse_lw_formula(std::string_view s) {
  if (s == "standard") return LwFormula::Standard;
  if (s == "paper") return LwFormula::Paper;
  throw ConfigError("unknown lw-formula '" + std::string(s) + "' (expected standard or paper)");
}

std::string_view to_string(LwFormula f) { return f == LwFormula::Paper ? "paper" : "standard"; }

ChenConvergenceError::ChenConvergenceError(Matrix last_iterate, double residual)
    : NumericError("Chen estimator did not converge (residual " + std::to_string(residual) + ")"),
      last_iterate_(std::move(last_iterate)),
      residual_(residual) {}

namespace {

void require_samples(const Matrix& x) {
  if (x.cols() < 2) throw DataError("covariance estimation needs n >= 2 samples");
  if (x.rows() < 1) throw DataError("covariance estimation needs at least one asset");
}

}  // namespace

CovarianceEstimate sample_covariance(const Matrix& x) {
  require_samples(x);
  const Matrix xc = center_columns(x);
  return {kernels::scatter(xc, 1.0 / static_cast<double>(x.cols())), EstimatorKind::SCM, std::nullopt};
}

CovarianceEstimate ledoit_wolf(const Matrix& x, LwFormula formula) {
  require_samples(x);
  const auto N = static_cast<double>(x.rows());
  const auto n = static_cast<double>(x.cols());
  const Matrix xc = center_columns(x);
  const Matrix s = kernels::scatter(xc, 1.0 / n);
  const double mu = s.trace() / N;
  if (!(mu > 0.0)) throw DataError("Ledoit-Wolf target is degenerate: data has zero variance");

  Matrix dispersion = s;
  dispersion.diagonal().array() -= mu;
  const double d2 = dispersion.squaredNorm();

  double rho = 1.0;
  if (formula == LwFormula::Standard) {
    const double b2 = std::min(kernels::outer_deviation_sum(xc, s) / (n * n), d2);
    if (d2 > 0.0) rho = b2 / d2;
  } else {
    const double b2 = kernels::outer_deviation_sum(x, s) / n;
    rho = b2 > 0.0 ? std::clamp(d2 / b2, 0.0, 1.0) : 1.0;
  }

  Matrix c = (1.0 - rho) * s;
  c.diagonal().array() += rho * mu;
  return {std::move(c), EstimatorKind::LW, rho};
}

double chen_shrinkage(const Matrix& samples) {
  const auto p = static_cast<double>(samples.rows());
  const auto n = static_cast<double>(samples.cols());
  Matrix normalized = samples;
  for (Eigen::Index t = 0; t < samples.cols(); ++t) normalized.col(t).normalize();
  const Matrix r = kernels::scatter(normalized, p / n);
  const double tr_r2 = r.squaredNorm();
  const double num = p * p + (1.0 - 2.0 / p) * tr_r2;
  const double den = (p * p - n * p - 2.0 * n) + (n + 1.0 + 2.0 * (n - 1.0) / p) * tr_r2;
  if (!(den > 0.0)) return 1.0;
  return std::clamp(num / den, 0.0, 1.0);
}

ChenFit chen_shape(const Matrix& samples, const ChenOptions& options) {
  require_samples(samples);
  for (Eigen::Index t = 0; t < samples.cols(); ++t)
    if (samples.col(t).squaredNorm() == 0.0) throw DataError("Chen estimator: all-zero sample column");

  const Eigen::Index N = samples.rows();
  const auto p = static_cast<double>(N);
  const auto n = static_cast<double>(samples.cols());
  const double rho = chen_shrinkage(samples);

  Matrix sigma = Matrix::Identity(N, N);
  double residual = 0.0;
  for (int it = 1; it <= options.max_iterations; ++it) {
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success) throw NumericError("Chen estimator: iterate lost definiteness");
    const Matrix whitened = llt.matrixL().solve(samples);
    Vector w(samples.cols());
    for (Eigen::Index t = 0; t < samples.cols(); ++t)
      w(t) = (1.0 - rho) * (p / n) / whitened.col(t).squaredNorm();
    Matrix next = kernels::weighted_scatter(samples, w);
    next.diagonal().array() += rho;
    next *= p / next.trace();

    residual = (next - sigma).norm();
    const double scale = sigma.norm();
    sigma = std::move(next);
    if (residual <= options.tolerance * scale) {
      return {{std::move(sigma), EstimatorKind::Chen, rho}, it, residual};
    }
  }
  throw ChenConvergenceError(std::move(sigma), residual);
}

ChenFit chen_fit(const Matrix& x, const ChenOptions& options) {
  require_samples(x);
  const Matrix xc = center_columns(x);
  const double target_trace = kernels::scatter(xc, 1.0 / static_cast<double>(x.cols())).trace();
  ChenFit fit = chen_shape(xc, options);
  fit.estimate.matrix *= target_trace / static_cast<double>(x.rows());
  return fit;
}

CovarianceEstimate chen_estimator(const Matrix& x, const ChenOptions& options) {
  return chen_fit(x, options).estimate;
}

CovarianceEstimate identity_estimate(std::size_t n_assets) {
  if (n_assets < 1) throw DataError("identity estimate needs at least one asset");
  const auto n = static_cast<Eigen::Index>(n_assets);
  return {Matrix::Identity(n, n), EstimatorKind::Identity, std::nullopt};
}

}  // namespace nnshrink
