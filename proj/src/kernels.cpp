#include "nnshrink/kernels.hpp"

#include <numeric>
#include <vector>

namespace nnshrink::kernels {
namespace {

// Upper-triangle entry of sum_t w_t x_t x_t^T from contiguous asset series.
inline double weighted_dot(const double* a, const double* b, const double* w, Eigen::Index n) {
  double acc = 0.0;
  for (Eigen::Index t = 0; t < n; ++t) acc += w[t] * a[t] * b[t];
  return acc;
}

Matrix scatter_impl(const Matrix& x, const Vector& w) {
  const Eigen::Index N = x.rows();
  const Eigen::Index n = x.cols();
  const Matrix xt = x.transpose();  // n x N, one contiguous column per asset
  Matrix s(N, N);
#pragma omp parallel for schedule(dynamic)
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index j = i; j < N; ++j) {
      const double v = weighted_dot(xt.col(i).data(), xt.col(j).data(), w.data(), n);
      s(i, j) = v;
      s(j, i) = v;
    }
  }
  return s;
}

}  // namespace

Matrix scatter(const Matrix& x, double scale) {
  return scatter_impl(x, Vector::Constant(x.cols(), scale));
}

Matrix weighted_scatter(const Matrix& x, const Vector& w) { return scatter_impl(x, w); }

double outer_deviation_sum(const Matrix& x, const Matrix& s) {
  const Eigen::Index N = x.rows();
  const Eigen::Index n = x.cols();
  std::vector<double> partial(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
  for (Eigen::Index t = 0; t < n; ++t) {
    const double* xt = x.col(t).data();
    double acc = 0.0;
    for (Eigen::Index j = 0; j < N; ++j)
      for (Eigen::Index i = 0; i < N; ++i) {
        const double d = xt[i] * xt[j] - s(i, j);
        acc += d * d;
      }
    partial[static_cast<std::size_t>(t)] = acc;
  }
  return std::accumulate(partial.begin(), partial.end(), 0.0);
}

Vector column_quadratic_forms(const Matrix& x, const Matrix& a) {
  const Eigen::Index n = x.cols();
  Vector q(n);
#pragma omp parallel for schedule(static)
  for (Eigen::Index t = 0; t < n; ++t) q(t) = x.col(t).dot(a * x.col(t));
  return q;
}

namespace reference {

Matrix scatter(const Matrix& x, double scale) {
  return weighted_scatter(x, Vector::Constant(x.cols(), scale));
}

Matrix weighted_scatter(const Matrix& x, const Vector& w) {
  const Eigen::Index N = x.rows();
  Matrix s = Matrix::Zero(N, N);
  for (Eigen::Index t = 0; t < x.cols(); ++t)
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index j = 0; j < N; ++j) s(i, j) += w(t) * x(i, t) * x(j, t);
  return s;
}

double outer_deviation_sum(const Matrix& x, const Matrix& s) {
  double total = 0.0;
  for (Eigen::Index t = 0; t < x.cols(); ++t) {
    const Matrix outer = x.col(t) * x.col(t).transpose();
    total += (outer - s).squaredNorm();
  }
  return total;
}

Vector column_quadratic_forms(const Matrix& x, const Matrix& a) {
  Vector q(x.cols());
  for (Eigen::Index t = 0; t < x.cols(); ++t) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.rows(); ++j) acc += x(i, t) * a(i, j) * x(j, t);
    q(t) = acc;
  }
  return q;
}

}  // namespace reference
}  // namespace nnshrink::kernels
