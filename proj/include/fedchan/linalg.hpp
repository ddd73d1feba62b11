// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>

#include <Eigen/Dense>

namespace fedchan {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using CRowVector = Eigen::RowVectorXcd;

/// Unitary n-point DFT matrix, entry (r, c) = exp(-j*2*pi*r*c/n) / sqrt(n).
CMatrix dft_matrix(int n);

/// Column-major vectorization.
CVector vec(const CMatrix& m);
CMatrix unvec(const CVector& v, int rows, int cols);

}  // namespace fedchan
