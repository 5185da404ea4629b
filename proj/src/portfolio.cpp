#include "nnshrink/portfolio.hpp"

#include <cmath>
#include <numeric>

#include "nnshrink/errors.hpp"
#include "nnshrink/kernels.hpp"
#include "nnshrink/market_data.hpp"

namespace nnshrink {

PortfolioWeights gmvp_weights(const Matrix& precision) {
  if (precision.rows() != precision.cols() || precision.rows() == 0)
    throw DataError("gmvp_weights: precision matrix must be square and non-empty");
  const Vector v = precision.rowwise().sum();
  const double total = v.sum();
  // Relative floor keeps the check invariant to rescaling P.
  if (!(total > 1e-12 * precision.cwiseAbs().sum()) || !std::isfinite(total))
    throw NumericError("gmvp_weights: 1^T P 1 is not positive; weights cannot be normalized");
  return {v / total, {}};
}

PortfolioWeights gmvp_weights(const PrecisionEstimate& precision) {
  return gmvp_weights(precision.matrix);
}

double theoretical_min_risk(const Matrix& c_true) {
  const PrecisionEstimate inv = invert_spd(c_true);
  return 1.0 / inv.matrix.sum();
}

double realized_risk(const Vector& h, const Matrix& c_true) {
  if (h.size() != c_true.rows() || c_true.rows() != c_true.cols())
    throw DataError("realized_risk: shape mismatch");
  return h.dot(c_true * h);
}

double realized_risk(const PortfolioWeights& h, const Matrix& c_true) {
  return realized_risk(h.weights, c_true);
}

double population_std(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

RiskReport empirical_risk(const PortfolioWeights& h, const Matrix& oos) {
  if (oos.cols() < 1) throw DataError("empirical_risk: no out-of-sample columns");
  if (h.weights.size() != oos.rows()) throw DataError("empirical_risk: shape mismatch");
  const Vector r = oos.transpose() * h.weights;
  const double sd = population_std(std::span<const double>(r.data(), static_cast<std::size_t>(r.size())));
  RiskReport rep;
  rep.variance = sd * sd;
  rep.annualized_volatility = std::sqrt(kTradingDaysPerYear * rep.variance);
  rep.samples = static_cast<std::size_t>(oos.cols());
  return rep;
}

double empirical_risk_quadratic(const Vector& h, const Matrix& oos) {
  if (oos.cols() < 1) throw DataError("empirical_risk: no out-of-sample columns");
  const Matrix cov = kernels::scatter(center_columns(oos), 1.0 / static_cast<double>(oos.cols()));
  return h.dot(cov * h);
}

std::vector<double> rolling_annualized_risk(std::span<const double> returns, std::size_t window,
                                            double periods_per_year) {
  if (window < 2) throw DataError("rolling risk window must be at least 2");
  if (returns.size() < window) throw DataError("rolling risk window longer than the series");
  std::vector<double> out;
  out.reserve(returns.size() - window + 1);
  const double scale = std::sqrt(periods_per_year);
  for (std::size_t end = window; end <= returns.size(); ++end)
    out.push_back(scale * population_std(returns.subspan(end - window, window)));
  return out;
}

}  // namespace nnshrink
