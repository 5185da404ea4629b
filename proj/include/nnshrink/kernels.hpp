#pragma once

#include "nnshrink/types.hpp"

// Data-parallel inner loops. The OpenMP versions are what the library calls;
// kernels::reference holds literal serial transcriptions used by the tests and
// benchmarks. Reductions write per-index partials and sum them serially, so
// results do not depend on the thread count.
namespace nnshrink::kernels {

/// scale * sum_t x_t x_t^T over the columns of x; exactly symmetric.
Matrix scatter(const Matrix& x, double scale);

/// sum_t w_t x_t x_t^T; exactly symmetric.
Matrix weighted_scatter(const Matrix& x, const Vector& w);

/// sum_t ||x_t x_t^T - s||_F^2.
double outer_deviation_sum(const Matrix& x, const Matrix& s);

/// Quadratic forms x_t^T a x_t for every column.
Vector column_quadratic_forms(const Matrix& x, const Matrix& a);

namespace reference {

Matrix scatter(const Matrix& x, double scale);
Matrix weighted_scatter(const Matrix& x, const Vector& w);
double outer_deviation_sum(const Matrix& x, const Matrix& s);
Vector column_quadratic_forms(const Matrix& x, const Matrix& a);

}  // namespace reference
}  // namespace nnshrink::kernels
