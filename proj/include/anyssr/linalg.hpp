#pragma once

#include <Eigen/Dense>

namespace anyssr {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// max |A - Aᵀ| element-wise.
double symmetry_residual(const Matrix& a);

/// True when a Cholesky factorization of the (symmetric) matrix succeeds.
bool is_positive_definite(const Matrix& a);

/// max |A - B| element-wise; infinity on shape mismatch.
double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace anyssr
