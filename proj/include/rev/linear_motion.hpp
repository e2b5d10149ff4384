#pragma once

// Least-squares constant-velocity reference motion.
//
// With design rows (1, t) for t = 1..t_h, the weights
//   w_lin = (A_h^T A_h)^{-1} A_h^T X      (2 x m: intercept row, slope row)
// give the fit A_h w_lin and the extrapolation A_f w_lin with rows
// (1, t), t = t_h+1..t_h+t_f.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <string>
#include <utility>

#include "rev/errors.hpp"
#include "rev/transforms.hpp"

namespace rev {

struct LinearFit {
  Matrix w_lin;  // 2 x m
  TimeSeq fitted;
  TimeSeq predicted;
};

namespace detail {

// Solves the 2x2 system M x = b by Gaussian elimination with partial pivoting.
inline std::array<double, 2> solve_2x2(std::array<std::array<double, 2>, 2> M, std::array<double, 2> b) {
  if (std::abs(M[1][0]) > std::abs(M[0][0])) {
    std::swap(M[0], M[1]);
    std::swap(b[0], b[1]);
  }
  if (M[0][0] == 0.0) throw InsufficientDataError("linear_fit: singular normal matrix");
  const double factor = M[1][0] / M[0][0];
  const double pivot = M[1][1] - factor * M[0][1];
  const double rhs = b[1] - factor * b[0];
  if (std::abs(pivot) < 1e-12 * std::abs(M[0][0])) throw InsufficientDataError("linear_fit: singular normal matrix");
  const double x1 = rhs / pivot;
  const double x0 = (b[0] - M[0][1] * x1) / M[0][0];
  return {x0, x1};
}

inline Matrix linear_design(int first, int count) {
  Matrix A(count, 2);
  for (int i = 0; i < count; ++i) {
    A(i, 0) = 1.0;
    A(i, 1) = static_cast<double>(first + i);
  }
  return A;
}

}  // namespace detail

inline LinearFit linear_fit(const TimeSeq& X, int t_f) {
  const int t_h = X.steps();
  if (t_h < 2) throw InsufficientDataError("linear_fit needs at least 2 observed steps, got " + std::to_string(t_h));
  if (t_f < 0) throw ShapeError("linear_fit: negative prediction length");

  const Matrix A_h = detail::linear_design(1, t_h);
  const Matrix normal = A_h.transpose() * A_h;
  const Matrix rhs = A_h.transpose() * X.values;

  Matrix w(2, X.dims());
  for (int j = 0; j < X.dims(); ++j) {
    const auto sol = detail::solve_2x2({{{normal(0, 0), normal(0, 1)}, {normal(1, 0), normal(1, 1)}}},
                                       {rhs(0, j), rhs(1, j)});
    w(0, j) = sol[0];
    w(1, j) = sol[1];
  }

  LinearFit fit;
  fit.w_lin = w;
  fit.fitted = TimeSeq{A_h * w, X.dt};
  fit.predicted = TimeSeq{detail::linear_design(t_h + 1, t_f) * w, X.dt};
  return fit;
}

inline TimeSeq residual(const TimeSeq& X, const LinearFit& fit) {
  if (X.values.rows() != fit.fitted.values.rows() || X.values.cols() != fit.fitted.values.cols())
    throw ShapeError("residual: observation and fit shapes differ");
  return TimeSeq{X.values - fit.fitted.values, X.dt};
}

}  // namespace rev
