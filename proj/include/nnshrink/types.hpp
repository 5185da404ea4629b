#pragma once

#include <Eigen/Dense>

namespace nnshrink {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

}  // namespace nnshrink

namespace nnshrink {

/// Selects the OpenMP path or the serial path of batch-level loops.
enum class Execution { Serial, Parallel };

}  // namespace nnshrink
