#include <gtest/gtest.h>

#include <random>

#include "rev/reverb.hpp"

using namespace rev;

namespace {

Matrix randn(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

Matrix low_rank(std::mt19937_64& rng, int r, int c, int rank) {
  if (rank == 0) return Matrix::Zero(r, c);
  return randn(rng, r, rank) * randn(rng, rank, c);
}

}  // namespace

TEST(Reverb, SimilarityIsOuterProductPerFeature) {
  Matrix f(3, 2);
  f << 1, 2, 3, 4, 5, 6;
  const SimilarityTensor F = sequential_similarity(f);
  ASSERT_EQ(F.features(), 2);
  ASSERT_EQ(F.steps(), 3);
  for (int d = 0; d < 2; ++d)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(F.slices[d](i, j), f(i, d) * f(j, d));
  EXPECT_EQ(numerical_rank(F.slices[0]), 1);
}

TEST(Reverb, SimilarityRejectsNaN) {
  Matrix f = Matrix::Ones(3, 2);
  f(0, 0) = std::nan("");
  EXPECT_THROW(sequential_similarity(f), DomainError);
}

TEST(Reverb, IdentityKernelsReturnSlice) {
  std::mt19937_64 rng(1);
  SimilarityTensor F{{randn(rng, 4, 4), randn(rng, 4, 4)}};
  const RehearsalField out = reverberation_transform(F, {Matrix::Identity(4, 4), Matrix::Identity(4, 4)});
  for (int d = 0; d < 2; ++d) EXPECT_LT((out.slices[d] - F.slices[d]).norm(), 1e-15);
}

TEST(Reverb, ZeroKernelGivesZeroField) {
  std::mt19937_64 rng(2);
  SimilarityTensor F{{randn(rng, 4, 4)}};
  const RehearsalField out = reverberation_transform(F, {Matrix::Zero(4, 6), randn(rng, 4, 3)});
  EXPECT_EQ(out.slices[0].norm(), 0.0);
  EXPECT_EQ(out.generations(), 3);
  EXPECT_EQ(out.future_steps(), 6);
}

TEST(Reverb, MatchesElementwiseTripleSum) {
  std::mt19937_64 rng(3);
  const Matrix R = bound_kernel(randn(rng, 5, 6)), G = bound_kernel(randn(rng, 5, 3));
  SimilarityTensor F{{randn(rng, 5, 5)}};
  const Matrix out = reverberation_transform(F, {R, G}).slices[0];
  for (int k = 0; k < 3; ++k) {
    for (int t = 0; t < 6; ++t) {
      double acc = 0.0;
      for (int a = 0; a < 5; ++a)
        for (int b = 0; b < 5; ++b) acc += G(a, k) * F.slices[0](a, b) * R(b, t);
      EXPECT_NEAR(out(k, t), acc, 1e-12);
    }
  }
}

TEST(Reverb, Linearity) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 100; ++i) {
    const ReverbKernelPair k{bound_kernel(randn(rng, 4, 6)), bound_kernel(randn(rng, 4, 5))};
    SimilarityTensor F1{{randn(rng, 4, 4), randn(rng, 4, 4)}}, F2{{randn(rng, 4, 4), randn(rng, 4, 4)}}, mix;
    const double a = u(rng), b = u(rng);
    for (int d = 0; d < 2; ++d) mix.slices.push_back(a * F1.slices[d] + b * F2.slices[d]);
    const auto o1 = reverberation_transform(F1, k), o2 = reverberation_transform(F2, k), om = reverberation_transform(mix, k);
    for (int d = 0; d < 2; ++d) EXPECT_LT((om.slices[d] - a * o1.slices[d] - b * o2.slices[d]).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Reverb, RankBoundHolds) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const int T = 6;
    const ReverbKernelPair k{low_rank(rng, T, 5, static_cast<int>(rng() % 6)), low_rank(rng, T, 4, static_cast<int>(rng() % 5))};
    SimilarityTensor F{{low_rank(rng, T, T, static_cast<int>(rng() % 7))}};
    EXPECT_EQ(rank_report(k, F).violations, 0);
  }
}

TEST(Reverb, RankOneSimilarityGivesRankOneSlice) {
  std::mt19937_64 rng(6);
  const Matrix f = randn(rng, 4, 3);
  const RehearsalField out =
      reverberation_transform(sequential_similarity(f), {bound_kernel(randn(rng, 4, 6)), bound_kernel(randn(rng, 4, 5))});
  for (const Matrix& s : out.slices) EXPECT_LE(numerical_rank(s), 1);
}

TEST(Reverb, OutputLiesInKernelSubspaces) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 50; ++i) {
    const ReverbKernelPair k{low_rank(rng, 6, 5, 2), low_rank(rng, 6, 4, 3)};
    SimilarityTensor F{{randn(rng, 6, 6)}};
    const SubspaceResiduals r = subspace_residuals(reverberation_transform(F, k).slices[0], k);
    EXPECT_LT(r.column, 1e-9);
    EXPECT_LT(r.row, 1e-9);
  }
}

TEST(Reverb, ShapeMismatchThrows) {
  SimilarityTensor F{{Matrix::Ones(4, 4)}};
  EXPECT_THROW(reverberation_transform(F, {Matrix::Ones(4, 6), Matrix::Ones(3, 2)}), ShapeError);
  EXPECT_THROW(reverberation_transform(F, {Matrix::Ones(5, 6), Matrix::Ones(5, 2)}), ShapeError);
}
