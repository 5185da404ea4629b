#pragma once

#include "nnshrink/types.hpp"

namespace nnshrink {

/// Eigenpairs of a symmetric matrix. Eigenvalues descend; column i of
/// `vectors` pairs with values[i]. Each column's largest-magnitude component
/// is positive (first such index on ties).
struct EigenSystem {
  Vector values;
  Matrix vectors;
};

enum class PrecisionSource { NN, DirectInverse };

struct PrecisionEstimate {
  Matrix matrix;
  PrecisionSource source = PrecisionSource::DirectInverse;
};

struct JacobiOptions {
  int max_sweeps = 100;
};

/// Cyclic Jacobi eigen-decomposition.
/// Throws DataError if ||A - A^T||_F > 1e-10 ||A||_F, NumericError if the
/// sweep budget runs out.
EigenSystem eigh(const Matrix& a, const JacobiOptions& options = {});

/// sum_i eta_i u_i u_i^T. Requires eta >= 0 elementwise.
PrecisionEstimate reconstruct_precision(const EigenSystem& es, const Vector& eta);

/// Cholesky-based inverse of a symmetric positive definite matrix.
PrecisionEstimate invert_spd(const Matrix& a);

}  // namespace nnshrink
