#pragma once

#include <cstddef>
#include <vector>

#include "speechflow/tensor.hpp"

namespace speechflow {

// Pivots with magnitude below this are treated as singular.
inline constexpr double kSingularPivot = 1e-12;

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Partial-pivoting factorization P*A = L*U.
struct LuFactors {
  std::vector<std::size_t> perm;  // row perm[i] of A is row i of P*A
  Tensor lower;                   // unit lower triangular
  Tensor upper;
  int sign = 1;                   // parity of perm

  std::size_t n() const { return perm.size(); }
  double log_abs_det() const;
  // Sign of det(A) (the determinant itself may overflow).
  int det_sign() const;
  // Solves A x = b for a vector b of length n.
  std::vector<double> solve(std::span<const double> b) const;
  Tensor permuted(const Tensor& a) const;
};

LuFactors lu_decompose(const Tensor& a);
Tensor mat_inverse(const Tensor& a);
double log_abs_det(const Tensor& a);

// Q factor of a Gram-Schmidt QR; a must be square and nonsingular.
Tensor orthonormalize(const Tensor& a);

}  // namespace speechflow
