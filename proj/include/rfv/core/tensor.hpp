#pragma once

#include <Eigen/Dense>

namespace rfv {

template <typename Scalar> using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar> using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixF = Matrix<float>;
using VectorF = Vector<float>;
using MatrixD = Matrix<double>;
using VectorD = Vector<double>;

/// F(x): real vector of the embedding dimension; entries may be negative.
using Embedding = VectorF;

} // namespace rfv
