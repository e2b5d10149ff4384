#include <gtest/gtest.h>

#include <complex>
#include <random>

#include "rev/transforms.hpp"

using namespace rev;

namespace {

Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

const TransformKind kAll[] = {TransformKind::none, TransformKind::haar, TransformKind::db2, TransformKind::dft};

}  // namespace

TEST(Transforms, HaarWorkedExample) {
  Matrix x(2, 1);
  x << 1.0, 3.0;
  const Matrix s = forward_values(x, TransformKind::haar);
  ASSERT_EQ(s.rows(), 1);
  ASSERT_EQ(s.cols(), 2);
  EXPECT_NEAR(s(0, 0), 4.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(s(0, 1), -2.0 / std::sqrt(2.0), 1e-15);
}

TEST(Transforms, HaarMatchesPairFormula) {
  std::mt19937_64 rng(3);
  const Matrix x = random_matrix(rng, 8, 2);
  const Matrix s = forward_values(x, TransformKind::haar);
  for (int k = 0; k < 4; ++k) {
    for (int j = 0; j < 2; ++j) {
      EXPECT_NEAR(s(k, j), (x(2 * k, j) + x(2 * k + 1, j)) / std::sqrt(2.0), 1e-14);
      EXPECT_NEAR(s(k, 2 + j), (x(2 * k, j) - x(2 * k + 1, j)) / std::sqrt(2.0), 1e-14);
    }
  }
}

TEST(Transforms, HaarPreservesEnergy) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    const Matrix x = random_matrix(rng, 12, 2);
    EXPECT_NEAR(forward_values(x, TransformKind::haar).squaredNorm(), x.squaredNorm(), 1e-10);
  }
}

TEST(Transforms, Db2InteriorMatchesFilterBank) {
  const double s3 = std::sqrt(3.0), n = 4.0 * std::sqrt(2.0);
  const double h[4] = {(1 + s3) / n, (3 + s3) / n, (3 - s3) / n, (1 - s3) / n};
  const double g[4] = {h[3], -h[2], h[1], -h[0]};
  std::mt19937_64 rng(5);
  const Matrix x = random_matrix(rng, 16, 1);
  const Matrix s = forward_values(x, TransformKind::db2);
  for (int k = 0; k + 1 < 8; ++k) {
    double a = 0.0;
    for (int j = 0; j < 4; ++j) a += h[j] * x(2 * k + j, 0);
    EXPECT_NEAR(s(k, 0), a, 1e-12) << "approx k=" << k;
  }
  for (int k = 1; k < 8; ++k) {
    double d = 0.0;
    for (int j = 0; j < 4; ++j) d += g[j] * x(2 * k - 2 + j, 0);
    EXPECT_NEAR(std::abs(s(k, 1)), std::abs(d), 1e-12) << "detail k=" << k;
  }
}

TEST(Transforms, Db2AnnihilatesLinearTrends) {
  Matrix x(12, 2);
  for (int i = 0; i < 12; ++i) {
    x(i, 0) = 0.3 + 1.7 * i;
    x(i, 1) = -2.0 + 0.25 * i;
  }
  const Matrix s = forward_values(x, TransformKind::db2);
  EXPECT_LT(s.rightCols(2).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Transforms, DftMatchesComplexSum) {
  std::mt19937_64 rng(6);
  const int t = 10;
  const Matrix x = random_matrix(rng, t, 2);
  const Matrix s = forward_values(x, TransformKind::dft);
  ASSERT_EQ(s.rows(), t / 2);
  ASSERT_EQ(s.cols(), 4);
  for (int j = 0; j < 2; ++j) {
    for (int k = 0; k <= t / 2; ++k) {
      std::complex<double> acc = 0.0;
      for (int n = 0; n < t; ++n) acc += x(n, j) * std::polar(1.0, -2.0 * M_PI * k * n / t);
      acc /= std::sqrt(static_cast<double>(t));
      if (k == 0) {
        EXPECT_NEAR(s(0, 2 * j), acc.real(), 1e-12);
      } else if (k == t / 2) {
        EXPECT_NEAR(s(0, 2 * j + 1), acc.real(), 1e-12);
      } else {
        EXPECT_NEAR(s(k, 2 * j), acc.real(), 1e-12);
        EXPECT_NEAR(s(k, 2 * j + 1), acc.imag(), 1e-12);
      }
    }
  }
}

TEST(Transforms, ShapeContract) {
  for (TransformKind k : {TransformKind::haar, TransformKind::db2, TransformKind::dft}) {
    const Matrix s = forward_values(Matrix::Ones(8, 2), k);
    EXPECT_EQ(s.rows(), 4);
    EXPECT_EQ(s.cols(), 4);
  }
  const Matrix s = forward_values(Matrix::Ones(7, 2), TransformKind::none);
  EXPECT_EQ(s.rows(), 7);
  EXPECT_EQ(s.cols(), 2);
}

TEST(Transforms, RoundTripAllKinds) {
  std::mt19937_64 rng(7);
  for (TransformKind k : kAll) {
    for (int i = 0; i < 100; ++i) {
      const int t = 2 * (1 + static_cast<int>(rng() % 8));
      const Matrix x = random_matrix(rng, t, 2, 10.0);
      const TimeSeq back = inverse(forward(TimeSeq{x, 0.4}, k));
      EXPECT_LT((back.values - x).cwiseAbs().maxCoeff(), 1e-9) << to_string(k) << " t=" << t;
    }
  }
}

TEST(Transforms, InverseOperatorMatchesInverse) {
  std::mt19937_64 rng(8);
  for (TransformKind k : kAll) {
    const Matrix s = random_matrix(rng, 6, 4);
    const Matrix P = inverse_operator(k, 6, 4);
    const Matrix x = inverse_values(s, k);
    Eigen::VectorXd vs(24);
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 4; ++c) vs(r * 4 + c) = s(r, c);
    const Eigen::VectorXd vx = P * vs;
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      for (Eigen::Index c = 0; c < x.cols(); ++c) EXPECT_NEAR(vx(r * x.cols() + c), x(r, c), 1e-12);
  }
}

TEST(Transforms, Errors) {
  EXPECT_THROW(forward_values(Matrix::Ones(7, 2), TransformKind::haar), LengthError);
  EXPECT_THROW(forward_values(Matrix::Ones(1, 2), TransformKind::none), LengthError);
  Matrix bad = Matrix::Ones(4, 2);
  bad(1, 1) = std::nan("");
  EXPECT_THROW(forward_values(bad, TransformKind::haar), DomainError);
  EXPECT_THROW(inverse_values(Matrix::Ones(2, 3), TransformKind::haar), ShapeError);
  EXPECT_THROW(parse_transform_kind("wavelet"), ConfigError);
  EXPECT_EQ(parse_transform_kind("db2"), TransformKind::db2);
}
