#pragma once

#include "tprop/network.hpp"

#include <cmath>
#include <cstring>
#include <functional>

namespace tprop::testing {

inline double rel_err(double got, double want) {
  const double denom = std::max(std::abs(want), 1e-12);
  return std::abs(got - want) / denom;
}

inline double rel_err(const Matrix& got, const Matrix& want) {
  const double denom = std::max(want.norm(), 1e-12);
  return (got - want).norm() / denom;
}

/// Central finite difference of a scalar loss w.r.t. every entry of `w`.
inline Matrix fd_gradient(const std::function<double(const Matrix&)>& loss, Matrix w,
                          double step = 1e-5) {
  Matrix grad(w.rows(), w.cols());
  for (Index i = 0; i < w.rows(); ++i)
    for (Index j = 0; j < w.cols(); ++j) {
      const double save = w(i, j);
      w(i, j) = save + step;
      const double up = loss(w);
      w(i, j) = save - step;
      const double dn = loss(w);
      w(i, j) = save;
      grad(i, j) = (up - dn) / (2.0 * step);
    }
  return grad;
}

/// Central finite difference of a vector-valued map w.r.t. its input point.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, Vector x,
                          double step = 1e-5) {
  const Vector base = f(x);
  Matrix jac(base.size(), x.size());
  for (Index j = 0; j < x.size(); ++j) {
    const double save = x(j);
    x(j) = save + step;
    const Vector up = f(x);
    x(j) = save - step;
    const Vector dn = f(x);
    x(j) = save;
    jac.col(j) = (up - dn) / (2.0 * step);
  }
  return jac;
}

inline bool bit_equal(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      if (std::memcmp(&a(i, j), &b(i, j), sizeof(double)) != 0) return false;
  return true;
}

}  // namespace tprop::testing
