// SPDX-License-Identifier: Apache-2.0
#include "fedchan/linalg.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fedchan {

CMatrix dft_matrix(int n) {
  if (n < 1) throw std::invalid_argument("dft_matrix: n must be >= 1");
  CMatrix f(n, n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      // Reduce the exponent modulo n first to keep the phase argument small.
      const long long k = (static_cast<long long>(r) * c) % n;
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / n;
      f(r, c) = std::polar(scale, angle);
    }
  }
  return f;
}

CVector vec(const CMatrix& m) {
  return Eigen::Map<const CVector>(m.data(), m.size());
}

CMatrix unvec(const CVector& v, int rows, int cols) {
  if (v.size() != static_cast<Eigen::Index>(rows) * cols) {
    throw std::invalid_argument("unvec: size mismatch");
  }
  return Eigen::Map<const CMatrix>(v.data(), rows, cols);
}

}  // namespace fedchan
