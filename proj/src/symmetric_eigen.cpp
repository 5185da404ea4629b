#include "nnshrink/symmetric_eigen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "nnshrink/errors.hpp"
#include "nnshrink/kernels.hpp"

namespace nnshrink {
namespace {

// Apply the rotation that zeroes a(p, q) to both the working matrix and V.
void rotate(Matrix& a, Matrix& v, Eigen::Index p, Eigen::Index q) {
  const double apq = a(p, q);
  const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
  double t;
  if (std::abs(theta) > 1e150) {
    t = 0.5 / theta;
  } else {
    t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
  }
  const double c = 1.0 / std::sqrt(t * t + 1.0);
  const double s = t * c;
  const Eigen::Index n = a.rows();
  for (Eigen::Index k = 0; k < n; ++k) {
    const double akp = a(k, p), akq = a(k, q);
    a(k, p) = c * akp - s * akq;
    a(k, q) = s * akp + c * akq;
  }
  for (Eigen::Index k = 0; k < n; ++k) {
    const double apk = a(p, k), aqk = a(q, k);
    a(p, k) = c * apk - s * aqk;
    a(q, k) = s * apk + c * aqk;
  }
  a(p, q) = 0.0;
  a(q, p) = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double vkp = v(k, p), vkq = v(k, q);
    v(k, p) = c * vkp - s * vkq;
    v(k, q) = s * vkp + c * vkq;
  }
}

double off_diagonal_abs_sum(const Matrix& a) {
  double sum = 0.0;
  for (Eigen::Index q = 1; q < a.cols(); ++q)
    for (Eigen::Index p = 0; p < q; ++p) sum += std::abs(a(p, q));
  return sum;
}

void sort_and_orient(EigenSystem& es) {
  const auto n = static_cast<std::size_t>(es.values.size());
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return es.values(i) > es.values(j); });
  EigenSystem sorted{Vector(es.values.size()), Matrix(es.vectors.rows(), es.vectors.cols())};
  for (std::size_t k = 0; k < n; ++k) {
    const auto col = static_cast<Eigen::Index>(k);
    sorted.values(col) = es.values(order[k]);
    sorted.vectors.col(col) = es.vectors.col(order[k]);
    Eigen::Index arg = 0;
    sorted.vectors.col(col).cwiseAbs().maxCoeff(&arg);
    if (sorted.vectors(arg, col) < 0.0) sorted.vectors.col(col) *= -1.0;
  }
  es = std::move(sorted);
}

}  // namespace

EigenSystem eigh(const Matrix& input, const JacobiOptions& options) {
  if (input.rows() != input.cols()) throw DataError("eigh: matrix is not square");
  if (!input.allFinite()) throw DataError("eigh: matrix has non-finite entries");
  const double norm = input.norm();
  if ((input - input.transpose()).norm() > 1e-10 * norm) throw DataError("eigh: matrix is not symmetric");

  const Eigen::Index n = input.rows();
  Matrix a = 0.5 * (input + input.transpose());
  Matrix v = Matrix::Identity(n, n);

  bool converged = n < 2;
  for (int sweep = 0; sweep < options.max_sweeps && !converged; ++sweep) {
    const double off = off_diagonal_abs_sum(a);
    if (off == 0.0) {
      converged = true;
      break;
    }
    // Early sweeps only rotate pairs above a threshold.
    const double threshold = sweep < 3 ? 0.2 * off / static_cast<double>(n * n) : 0.0;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double g = 100.0 * std::abs(a(p, q));
        if (sweep > 3 && std::abs(a(p, p)) + g == std::abs(a(p, p)) &&
            std::abs(a(q, q)) + g == std::abs(a(q, q))) {
          a(p, q) = 0.0;
          a(q, p) = 0.0;
        } else if (std::abs(a(p, q)) > threshold) {
          rotate(a, v, p, q);
        }
      }
    }
  }
  if (!converged && off_diagonal_abs_sum(a) != 0.0)
    throw NumericError("eigh: Jacobi sweeps did not converge");

  EigenSystem es{a.diagonal(), std::move(v)};
  sort_and_orient(es);
  return es;
}

PrecisionEstimate reconstruct_precision(const EigenSystem& es, const Vector& eta) {
  if (eta.size() != es.values.size() || es.vectors.cols() != eta.size())
    throw DataError("reconstruct_precision: eta length does not match the eigensystem");
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    if (!(eta(i) >= 0.0) || !std::isfinite(eta(i)))
      throw DataError("reconstruct_precision: eta must be finite and nonnegative");
  return {kernels::weighted_scatter(es.vectors, eta), PrecisionSource::NN};
}

PrecisionEstimate invert_spd(const Matrix& a) {
  if (a.rows() != a.cols()) throw DataError("invert_spd: matrix is not square");
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw NumericError("invert_spd: matrix is not positive definite");
  Matrix inv = llt.solve(Matrix::Identity(a.rows(), a.cols()));
  Matrix sym = 0.5 * (inv + inv.transpose());
  return {std::move(sym), PrecisionSource::DirectInverse};
}

}  // namespace nnshrink
