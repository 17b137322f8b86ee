#pragma once

// Eigen aliases. Row-major throughout: rows are time steps / sequence
// positions / batch entries, which keeps per-row operations contiguous.

#include <Eigen/Dense>

namespace ddsd {

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatF = MatX<float>;
using MatD = MatX<double>;
using VecF = VecX<float>;
using VecD = VecX<double>;

}  // namespace ddsd
