#pragma once

#include <cmath>
#include <functional>

#include "lpgftw/common.hpp"

namespace lpgftw::testing {

inline double rel_err(const Matrix& a, const Matrix& b) {
  const double scale = std::max(b.norm(), 1e-300);
  return (a - b).norm() / scale;
}

/// Central differences of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                          double h = 1e-5) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector a = x, b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

/// Central differences of a vector-valued gradient, symmetrized.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x,
                          double h = 1e-5) {
  const Eigen::Index n = x.size();
  Matrix J(f(x).size(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector a = x, b = x;
    a[i] += h;
    b[i] -= h;
    J.col(i) = (f(a) - f(b)) / (2 * h);
  }
  return J;
}

inline Matrix randm(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j) m.col(j) = randn(rows, rng);
  return m;
}

inline Matrix random_spd(int n, Rng& rng, double shift = 0.5) {
  Matrix A(n, n);
  for (int i = 0; i < n; ++i) A.col(i) = randn(n, rng);
  return A * A.transpose() / n + shift * Matrix::Identity(n, n);
}

inline Matrix random_neg_def(int n, Rng& rng, double shift = 0.5) { return -random_spd(n, rng, shift); }

}  // namespace lpgftw::testing
