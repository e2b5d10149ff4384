#pragma once

// Invertible single-level sequence transforms mapping a trajectory of shape
// (t, m) into a time-frequency representation of shape (T, M).
//
//   haar  orthonormal pair average / pair difference, (t, m) -> (t/2, 2m)
//   db2   Daubechies-2 via lifting, (t, m) -> (t/2, 2m)
//   dft   packed real DFT, (t, m) -> (t/2, 2m)
//   none  identity, (t, m) -> (t, m)
//
// Wavelet spectra store approximation coefficients in columns [0, m) and
// detail coefficients in columns [m, 2m). The DFT spectrum stores bin k of
// spatial dim j as (Re, Im) in columns (2j, 2j+1); the always-zero imaginary
// slot of bin 0 carries the real Nyquist bin so the packing stays invertible.
//
// DB2 boundary handling: the lifting steps extrapolate their neighbour
// sequences affinely past either end. Lifting is invertible for any boundary
// rule, and the affine rule keeps both vanishing moments at the borders, so an
// exactly linear input yields all-zero detail coefficients. Haar (one
// vanishing moment) is the default because its two-sample support localizes
// abrupt trajectory changes most finely.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "rev/errors.hpp"

namespace rev {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class TransformKind { none, dft, db2, haar };

inline std::string_view to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::none: return "none";
    case TransformKind::dft: return "dft";
    case TransformKind::db2: return "db2";
    case TransformKind::haar: return "haar";
  }
  return "unknown";
}

inline TransformKind parse_transform_kind(std::string_view name) {
  if (name == "haar") return TransformKind::haar;
  if (name == "db2") return TransformKind::db2;
  if (name == "dft") return TransformKind::dft;
  if (name == "none") return TransformKind::none;
  throw ConfigError("unknown transform kind '" + std::string(name) + "'");
}

// Positions in meters, one row per time step.
struct TimeSeq {
  Matrix values;
  double dt = 0.4;

  int steps() const { return static_cast<int>(values.rows()); }
  int dims() const { return static_cast<int>(values.cols()); }
};

struct Spectrum {
  Matrix values;
  TransformKind kind = TransformKind::haar;
  double dt = 0.4;

  int steps() const { return static_cast<int>(values.rows()); }
  int dims() const { return static_cast<int>(values.cols()); }
};

struct SpectrumShape {
  int steps = 0;
  int dims = 0;
};

inline SpectrumShape spectrum_shape(int t, int m, TransformKind kind) {
  if (kind == TransformKind::none) return {t, m};
  return {t / 2, 2 * m};
}

// Time-domain shape recovered from a spectrum shape.
inline SpectrumShape time_shape(int T, int M, TransformKind kind) {
  if (kind == TransformKind::none) return {T, M};
  return {2 * T, M / 2};
}

namespace detail {

inline void check_finite(const Matrix& x) {
  if (!x.allFinite()) throw DomainError("transform input contains NaN or Inf");
}

inline void check_time_length(const Matrix& x, TransformKind kind) {
  if (x.rows() < 2) throw LengthError("sequence needs at least 2 steps, got " + std::to_string(x.rows()));
  if (kind != TransformKind::none && x.rows() % 2 != 0) {
    throw LengthError(std::string(to_string(kind)) + " transform needs an even length, got " +
                      std::to_string(x.rows()));
  }
}

inline void check_spectrum_shape(const Matrix& s, TransformKind kind) {
  if (s.rows() < 1 || s.cols() < 1) throw ShapeError("empty spectrum");
  if (kind != TransformKind::none && s.cols() % 2 != 0) {
    throw ShapeError(std::string(to_string(kind)) + " spectrum needs an even column count, got " +
                     std::to_string(s.cols()));
  }
}

inline Matrix haar_forward(const Matrix& x) {
  const Eigen::Index T = x.rows() / 2, m = x.cols();
  const double c = 1.0 / std::numbers::sqrt2;
  Matrix out(T, 2 * m);
  for (Eigen::Index k = 0; k < T; ++k) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double a = x(2 * k, j), b = x(2 * k + 1, j);
      out(k, j) = (a + b) * c;
      out(k, m + j) = (a - b) * c;
    }
  }
  return out;
}

inline Matrix haar_inverse(const Matrix& s) {
  const Eigen::Index T = s.rows(), m = s.cols() / 2;
  const double c = 1.0 / std::numbers::sqrt2;
  Matrix x(2 * T, m);
  for (Eigen::Index k = 0; k < T; ++k) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double a = s(k, j), d = s(k, m + j);
      x(2 * k, j) = (a + d) * c;
      x(2 * k + 1, j) = (a - d) * c;
    }
  }
  return x;
}

// Value of a sequence at index i, extrapolated affinely outside [0, n).
inline double affine_at(const Vector& v, Eigen::Index i) {
  const Eigen::Index n = v.size();
  if (i >= 0 && i < n) return v(i);
  if (n == 1) return v(0);
  if (i < 0) return v(0) + static_cast<double>(i) * (v(1) - v(0));
  return v(n - 1) + static_cast<double>(i - n + 1) * (v(n - 1) - v(n - 2));
}

struct Db2Constants {
  static constexpr double sqrt3 = std::numbers::sqrt3;
  static constexpr double p0 = sqrt3 / 4.0;
  static constexpr double p1 = (sqrt3 - 2.0) / 4.0;
  static inline const double approx_scale = (sqrt3 - 1.0) / std::numbers::sqrt2;
  static inline const double detail_scale = (sqrt3 + 1.0) / std::numbers::sqrt2;
};

inline void db2_forward_column(const Vector& x, Eigen::Ref<Vector> approx, Eigen::Ref<Vector> detail) {
  using C = Db2Constants;
  const Eigen::Index T = x.size() / 2;
  Vector s(T), d(T);
  for (Eigen::Index n = 0; n < T; ++n) {
    s(n) = x(2 * n);
    d(n) = x(2 * n + 1);
  }
  Vector s1 = s + C::sqrt3 * d;
  Vector d1(T);
  for (Eigen::Index n = 0; n < T; ++n) d1(n) = d(n) - C::p0 * s1(n) - C::p1 * affine_at(s1, n - 1);
  Vector s2(T);
  for (Eigen::Index n = 0; n < T; ++n) s2(n) = s1(n) - affine_at(d1, n + 1);
  approx = C::approx_scale * s2;
  detail = C::detail_scale * d1;
}

inline Vector db2_inverse_column(const Vector& approx, const Vector& detail) {
  using C = Db2Constants;
  const Eigen::Index T = approx.size();
  Vector s2 = approx / C::approx_scale;
  Vector d1 = detail / C::detail_scale;
  Vector s1(T);
  for (Eigen::Index n = 0; n < T; ++n) s1(n) = s2(n) + affine_at(d1, n + 1);
  Vector d(T);
  for (Eigen::Index n = 0; n < T; ++n) d(n) = d1(n) + C::p0 * s1(n) + C::p1 * affine_at(s1, n - 1);
  Vector s = s1 - C::sqrt3 * d;
  Vector x(2 * T);
  for (Eigen::Index n = 0; n < T; ++n) {
    x(2 * n) = s(n);
    x(2 * n + 1) = d(n);
  }
  return x;
}

inline Matrix db2_forward(const Matrix& x) {
  const Eigen::Index T = x.rows() / 2, m = x.cols();
  Matrix out(T, 2 * m);
  for (Eigen::Index j = 0; j < m; ++j) {
    Vector a(T), d(T);
    db2_forward_column(x.col(j), a, d);
    out.col(j) = a;
    out.col(m + j) = d;
  }
  return out;
}

inline Matrix db2_inverse(const Matrix& s) {
  const Eigen::Index T = s.rows(), m = s.cols() / 2;
  Matrix x(2 * T, m);
  for (Eigen::Index j = 0; j < m; ++j) x.col(j) = db2_inverse_column(s.col(j), s.col(m + j));
  return x;
}

inline Matrix dft_forward(const Matrix& x) {
  const Eigen::Index t = x.rows(), T = t / 2, m = x.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(t));
  const double w = 2.0 * std::numbers::pi / static_cast<double>(t);
  Matrix out = Matrix::Zero(T, 2 * m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index k = 0; k < T; ++k) {
      double re = 0.0, im = 0.0;
      for (Eigen::Index n = 0; n < t; ++n) {
        const double phase = w * static_cast<double>(k * n);
        re += x(n, j) * std::cos(phase);
        im -= x(n, j) * std::sin(phase);
      }
      out(k, 2 * j) = re * scale;
      out(k, 2 * j + 1) = im * scale;
    }
    double nyquist = 0.0;
    for (Eigen::Index n = 0; n < t; ++n) nyquist += (n % 2 == 0 ? 1.0 : -1.0) * x(n, j);
    out(0, 2 * j + 1) = nyquist * scale;
  }
  return out;
}

inline Matrix dft_inverse(const Matrix& s) {
  const Eigen::Index T = s.rows(), t = 2 * T, m = s.cols() / 2;
  const double scale = 1.0 / std::sqrt(static_cast<double>(t));
  const double w = 2.0 * std::numbers::pi / static_cast<double>(t);
  Matrix x(t, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const double dc = s(0, 2 * j), nyquist = s(0, 2 * j + 1);
    for (Eigen::Index n = 0; n < t; ++n) {
      double v = dc + (n % 2 == 0 ? nyquist : -nyquist);
      for (Eigen::Index k = 1; k < T; ++k) {
        const double phase = w * static_cast<double>(k * n);
        v += 2.0 * (s(k, 2 * j) * std::cos(phase) - s(k, 2 * j + 1) * std::sin(phase));
      }
      x(n, j) = v * scale;
    }
  }
  return x;
}

}  // namespace detail

// Raw-matrix forward transform. Throws LengthError / DomainError.
inline Matrix forward_values(const Matrix& x, TransformKind kind) {
  detail::check_time_length(x, kind);
  detail::check_finite(x);
  switch (kind) {
    case TransformKind::none: return x;
    case TransformKind::haar: return detail::haar_forward(x);
    case TransformKind::db2: return detail::db2_forward(x);
    case TransformKind::dft: return detail::dft_forward(x);
  }
  throw ConfigError("unknown transform kind");
}

inline Matrix inverse_values(const Matrix& s, TransformKind kind) {
  detail::check_spectrum_shape(s, kind);
  switch (kind) {
    case TransformKind::none: return s;
    case TransformKind::haar: return detail::haar_inverse(s);
    case TransformKind::db2: return detail::db2_inverse(s);
    case TransformKind::dft: return detail::dft_inverse(s);
  }
  throw ConfigError("unknown transform kind");
}

inline Spectrum forward(const TimeSeq& seq, TransformKind kind = TransformKind::haar) {
  return Spectrum{forward_values(seq.values, kind), kind, seq.dt};
}

inline TimeSeq inverse(const Spectrum& spec) { return TimeSeq{inverse_values(spec.values, spec.kind), spec.dt}; }

// Every transform here is linear, so the inverse is fully described by the
// matrix P with vec(x) = P * vec(s), vec being the row-major flattening of a
// (T, M) spectrum and of the (t, m) sequence.
inline Matrix inverse_operator(TransformKind kind, int T, int M) {
  const SpectrumShape ts = time_shape(T, M, kind);
  Matrix P(ts.steps * ts.dims, T * M);
  Matrix basis = Matrix::Zero(T, M);
  for (int r = 0; r < T; ++r) {
    for (int c = 0; c < M; ++c) {
      basis(r, c) = 1.0;
      const Matrix x = inverse_values(basis, kind);
      for (int i = 0; i < ts.steps; ++i)
        for (int j = 0; j < ts.dims; ++j) P(i * ts.dims + j, r * M + c) = x(i, j);
      basis(r, c) = 0.0;
    }
  }
  return P;
}

}  // namespace rev
