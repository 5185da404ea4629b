#pragma once

#include <optional>
#include <string_view>

#include "nnshrink/errors.hpp"
#include "nnshrink/types.hpp"

namespace nnshrink {

enum class EstimatorKind { SCM, LW, Chen, Identity };

std::string_view to_string(EstimatorKind kind);

struct CovarianceEstimate {
  Matrix matrix;
  EstimatorKind kind = EstimatorKind::SCM;
  std::optional<double> shrinkage_intensity;
};

/// Which expression sets the Ledoit-Wolf intensity.
///  standard: rho = min(1, bbar^2 / d^2), bbar^2 = (1/n^2) sum_t ||xc_t xc_t^T - S||_F^2
///  paper:    rho = clamp(a^2 / b^2, 0, 1), b^2 = (1/n) sum_t ||x_t x_t^T - S||_F^2 on raw x
enum class LwFormula { Standard, Paper };

LwFormula parse_lw_formula(std::string_view s);
std::string_view to_string(LwFormula f);

/// S_N = (1/n) sum_t xc_t xc_t^T with xc the row-demeaned data. Requires n >= 2.
CovarianceEstimate sample_covariance(const Matrix& x);

/// rho * mu * I + (1 - rho) * S_N with mu = tr(S_N) / N.
CovarianceEstimate ledoit_wolf(const Matrix& x, LwFormula formula = LwFormula::Standard);

struct ChenOptions {
  int max_iterations = 200;
  double tolerance = 1e-10;  // relative Frobenius change between iterates
};

struct ChenFit {
  CovarianceEstimate estimate;
  int iterations = 0;
  double residual = 0.0;  // Frobenius norm of the last step, trace-N scale
};

/// Plug-in shrinkage weight of the regularized Tyler estimator, computed from
/// the self-normalized samples x_t / ||x_t||. Clamped to [0, 1].
double chen_shrinkage(const Matrix& samples);

/// Regularized Tyler fixed point on the given samples (no centering), trace N.
ChenFit chen_shape(const Matrix& samples, const ChenOptions& options = {});

/// Centers x, runs chen_shape, and rescales the result to trace tr(S_N).
ChenFit chen_fit(const Matrix& x, const ChenOptions& options = {});
CovarianceEstimate chen_estimator(const Matrix& x, const ChenOptions& options = {});

CovarianceEstimate identity_estimate(std::size_t n_assets);

/// Thrown when the Tyler iteration exhausts its budget.
class ChenConvergenceError : public NumericError {
 public:
  ChenConvergenceError(Matrix last_iterate, double residual);

  const Matrix& last_iterate() const { return last_iterate_; }
  double residual() const { return residual_; }

 private:
  Matrix last_iterate_;
  double residual_;
};

}  // namespace nnshrink
