#include "speechflow/linalg.hpp"

#include <cmath>
#include <utility>

#include "speechflow/error.hpp"

namespace speechflow {

namespace {

void require_square(const Tensor& a, const char* context) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1))
    throw DimensionError(std::string(context) + ": expected a square matrix, got " +
                         shape_string(a.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = &c.at(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a.at(i, p);
      const double* brow = &b.at(p, 0);
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected a matrix");
  Tensor t({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

LuFactors lu_decompose(const Tensor& a) {
  require_square(a, "lu_decompose");
  const std::size_t n = a.dim(0);
  Tensor work = a;
  LuFactors f;
  f.perm.resize(n);
  for (std::size_t i = 0; i < n; ++i) f.perm[i] = i;

  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    double best = std::abs(work.at(col, col));
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(work.at(r, col)) > best) {
        best = std::abs(work.at(r, col));
        pivot = r;
      }
    }
    if (!(best >= kSingularPivot))
      throw SingularMatrixError("lu_decompose: pivot " + std::to_string(best) + " in column " +
                                std::to_string(col));
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(work.at(col, j), work.at(pivot, j));
      std::swap(f.perm[col], f.perm[pivot]);
      f.sign = -f.sign;
    }
    const double inv = 1.0 / work.at(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double factor = work.at(r, col) * inv;
      work.at(r, col) = factor;
      if (factor == 0.0) continue;
      for (std::size_t j = col + 1; j < n; ++j) work.at(r, j) -= factor * work.at(col, j);
    }
  }

  f.lower = Tensor::identity(n);
  f.upper = Tensor({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (j < i)
        f.lower.at(i, j) = work.at(i, j);
      else
        f.upper.at(i, j) = work.at(i, j);
    }
  return f;
}

double LuFactors::log_abs_det() const {
  double s = 0.0;
  for (std::size_t i = 0; i < n(); ++i) s += std::log(std::abs(upper.at(i, i)));
  return s;
}

int LuFactors::det_sign() const {
  int s = sign;
  for (std::size_t i = 0; i < n(); ++i)
    if (upper.at(i, i) < 0) s = -s;
  return s;
}

std::vector<double> LuFactors::solve(std::span<const double> b) const {
  const std::size_t size = n();
  if (b.size() != size) throw DimensionError("LuFactors::solve: rhs length mismatch");
  std::vector<double> y(size);
  for (std::size_t i = 0; i < size; ++i) {
    double s = b[perm[i]];
    for (std::size_t j = 0; j < i; ++j) s -= lower.at(i, j) * y[j];
    y[i] = s;
  }
  for (std::size_t i = size; i-- > 0;) {
    double s = y[i];
    for (std::size_t j = i + 1; j < size; ++j) s -= upper.at(i, j) * y[j];
    y[i] = s / upper.at(i, i);
  }
  return y;
}

Tensor LuFactors::permuted(const Tensor& a) const {
  Tensor p(a.shape());
  for (std::size_t i = 0; i < n(); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) p.at(i, j) = a.at(perm[i], j);
  return p;
}

Tensor mat_inverse(const Tensor& a) {
  const LuFactors f = lu_decompose(a);
  const std::size_t n = f.n();
  Tensor inv({n, n});
  std::vector<double> e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    const auto col = f.solve(e);
    for (std::size_t i = 0; i < n; ++i) inv.at(i, j) = col[i];
    e[j] = 0.0;
  }
  return inv;
}

double log_abs_det(const Tensor& a) { return lu_decompose(a).log_abs_det(); }

Tensor orthonormalize(const Tensor& a) {
  require_square(a, "orthonormalize");
  const std::size_t n = a.dim(0);
  Tensor q = a;
  // Modified Gram-Schmidt over columns, two passes for stability.
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < j; ++k) {
        double proj = 0.0;
        for (std::size_t i = 0; i < n; ++i) proj += q.at(i, k) * q.at(i, j);
        for (std::size_t i = 0; i < n; ++i) q.at(i, j) -= proj * q.at(i, k);
      }
      double norm = 0.0;
      for (std::size_t i = 0; i < n; ++i) norm += q.at(i, j) * q.at(i, j);
      norm = std::sqrt(norm);
      if (norm < kSingularPivot) throw SingularMatrixError("orthonormalize: rank deficient");
      for (std::size_t i = 0; i < n; ++i) q.at(i, j) /= norm;
    }
  }
  return q;
}

}  // namespace speechflow
