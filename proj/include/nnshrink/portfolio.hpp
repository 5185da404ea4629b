#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nnshrink/symmetric_eigen.hpp"
#include "nnshrink/types.hpp"

namespace nnshrink {

inline constexpr double kTradingDaysPerYear = 252.0;

struct PortfolioWeights {
  Vector weights;
  std::vector<std::string> assets;
};

struct RiskReport {
  double variance = 0.0;
  double annualized_volatility = 0.0;
  std::size_t samples = 0;
};

/// P 1 / (1^T P 1). Throws NumericError when 1^T P 1 is not safely positive.
PortfolioWeights gmvp_weights(const PrecisionEstimate& precision);
PortfolioWeights gmvp_weights(const Matrix& precision);

/// 1 / (1^T C^{-1} 1).
double theoretical_min_risk(const Matrix& c_true);

/// h^T C h.
double realized_risk(const PortfolioWeights& h, const Matrix& c_true);
double realized_risk(const Vector& h, const Matrix& c_true);

/// Variance (1/m convention) of the portfolio returns h^T x_t over oos columns.
RiskReport empirical_risk(const PortfolioWeights& h, const Matrix& oos);

/// h^T ((1/m) sum_t xc_t xc_t^T) h evaluated as a quadratic form.
double empirical_risk_quadratic(const Vector& h, const Matrix& oos);

/// Population standard deviation of a series.
double population_std(std::span<const double> xs);

/// sqrt(252) * std of each trailing window; T - window + 1 points.
std::vector<double> rolling_annualized_risk(std::span<const double> returns, std::size_t window,
                                            double periods_per_year = kTradingDaysPerYear);

}  // namespace nnshrink
