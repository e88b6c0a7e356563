#pragma once

// Brute-force reference implementations used only by tests.

#include <cmath>
#include <functional>
#include <vector>

#include "speechflow/tensor.hpp"

namespace speechflow::oracle {

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.dim(1); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  return c;
}

// Laplace expansion along the first row.
inline double cofactor_det(const std::vector<std::vector<double>>& m) {
  const std::size_t n = m.size();
  if (n == 1) return m[0][0];
  double det = 0.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::vector<std::vector<double>> minor;
    for (std::size_t r = 1; r < n; ++r) {
      std::vector<double> row;
      for (std::size_t c = 0; c < n; ++c)
        if (c != col) row.push_back(m[r][c]);
      minor.push_back(row);
    }
    det += ((col % 2) ? -1.0 : 1.0) * m[0][col] * cofactor_det(minor);
  }
  return det;
}

inline double cofactor_det(const Tensor& a) {
  std::vector<std::vector<double>> m(a.dim(0), std::vector<double>(a.dim(1)));
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) m[i][j] = a.at(i, j);
  return cofactor_det(m);
}

inline Tensor direct_conv(const Tensor& x, const Tensor& k, const Tensor& bias) {
  const long C = x.dim(0), H = x.dim(1), W = x.dim(2), O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  Tensor out({k.dim(0), x.dim(1), x.dim(2)});
  for (long o = 0; o < O; ++o)
    for (long i = 0; i < H; ++i)
      for (long j = 0; j < W; ++j) {
        double s = bias[o];
        for (long c = 0; c < C; ++c)
          for (long a = 0; a < kh; ++a)
            for (long b = 0; b < kw; ++b) {
              const long si = i + a - kh / 2, sj = j + b - kw / 2;
              if (si < 0 || sj < 0 || si >= H || sj >= W) continue;
              s += k[((o * C + c) * kh + a) * kw + b] * x.at(c, si, sj);
            }
        out.at(o, i, j) = s;
      }
  return out;
}

// Central-difference gradient of f with respect to every entry of t.
inline Tensor finite_difference(Tensor& t, const std::function<double()>& f, double h) {
  Tensor g(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double saved = t[i];
    t[i] = saved + h;
    const double up = f();
    t[i] = saved - h;
    const double down = f();
    t[i] = saved;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// Numerical Jacobian of a vector map R^n -> R^n by central differences.
inline Tensor numerical_jacobian(const std::function<std::vector<double>(const std::vector<double>&)>& f,
                                 std::vector<double> x, double h) {
  const std::size_t n = x.size();
  Tensor jac({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    const double saved = x[j];
    x[j] = saved + h;
    const auto up = f(x);
    x[j] = saved - h;
    const auto down = f(x);
    x[j] = saved;
    for (std::size_t i = 0; i < n; ++i) jac.at(i, j) = (up[i] - down[i]) / (2 * h);
  }
  return jac;
}

inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace speechflow::oracle
