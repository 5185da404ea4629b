#include "nnshrink/synthetic.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "nnshrink/errors.hpp"

namespace nnshrink::synthetic {

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = normal(rng);
  return m;
}

Matrix random_orthogonal(std::size_t n, Rng& rng) {
  const Matrix g = gaussian_matrix(n, n, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < q.cols(); ++i)
    if (r(i, i) < 0.0) q.col(i) *= -1.0;
  return q;
}

Matrix random_spd(std::size_t n, Rng& rng) {
  const Matrix g = gaussian_matrix(n, n, rng);
  Matrix a = g * g.transpose();
  a.diagonal().array() += 1.0;
  return 0.5 * (a + a.transpose());
}

Matrix random_symmetric(std::size_t n, Rng& rng) {
  const Matrix g = gaussian_matrix(n, n, rng);
  return 0.5 * (g + g.transpose());
}

Population spiked_population(std::size_t n_assets, const std::vector<double>& spikes, double bulk, Rng& rng,
                             double scale) {
  if (spikes.size() > n_assets) throw ConfigError("more spikes than assets");
  Vector spectrum = Vector::Constant(static_cast<Eigen::Index>(n_assets), bulk);
  for (std::size_t i = 0; i < spikes.size(); ++i) spectrum(static_cast<Eigen::Index>(i)) = spikes[i];
  spectrum *= scale;
  const Matrix q = random_orthogonal(n_assets, rng);
  Population pop;
  pop.root = q * spectrum.cwiseSqrt().asDiagonal();
  pop.covariance = q * spectrum.asDiagonal() * q.transpose();
  pop.covariance = 0.5 * (pop.covariance + pop.covariance.transpose()).eval();
  return pop;
}

std::vector<double> linear_spikes(std::size_t count, double lo, double hi) {
  std::vector<double> s(count);
  for (std::size_t i = 0; i < count; ++i)
    s[i] = count == 1 ? hi : hi - (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  return s;
}

Matrix draw_returns(const Population& pop, std::size_t n, Rng& rng) {
  return pop.root * gaussian_matrix(static_cast<std::size_t>(pop.root.cols()), n, rng);
}

std::vector<std::string> weekday_dates(const std::string& first_date, std::size_t count) {
  using namespace std::chrono;
  int y = 0;
  unsigned mo = 0, d = 0;
  if (std::sscanf(first_date.c_str(), "%d-%u-%u", &y, &mo, &d) != 3) throw ConfigError("bad start date " + first_date);
  const year_month_day start{year{y}, month{mo}, day{d}};
  if (!start.ok()) throw ConfigError("bad start date " + first_date);
  sys_days day_point{start};
  std::vector<std::string> out;
  out.reserve(count);
  while (out.size() < count) {
    const weekday wd{day_point};
    if (wd != Saturday && wd != Sunday) {
      const year_month_day ymd{day_point};
      char buf[16];
      std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()), unsigned(ymd.day()));
      out.emplace_back(buf);
    }
    day_point += days{1};
  }
  return out;
}

PriceTable price_table(const Matrix& returns, const std::vector<std::string>& assets, const std::string& first_date) {
  PriceTable table;
  table.assets = assets;
  table.dates = weekday_dates(first_date, static_cast<std::size_t>(returns.cols()) + 1);
  table.prices.resize(returns.cols() + 1, returns.rows());
  for (Eigen::Index i = 0; i < returns.rows(); ++i) {
    double log_p = std::log(100.0);
    table.prices(0, i) = 100.0;
    for (Eigen::Index t = 0; t < returns.cols(); ++t) {
      log_p += returns(i, t);
      table.prices(t + 1, i) = std::exp(log_p);
    }
  }
  return table;
}

}  // namespace nnshrink::synthetic
