#pragma once

// The reverberation transform.
//
// A representation f (T rows of D features) is turned into the per-feature
// similarity F[:, :, d] = f[:, d] f[:, d]^T, which a kernel pair (R, G) maps
// into a rehearsal field
//
//   Fbar[:, :, d] = G^T F[:, :, d] R        (K_g x T_f per feature)
//
// R (T x T_f) routes every observed step to every future step; G (T x K_g)
// recombines the routed steps into K_g alternatives. Both kernels are bounded
// to (-1, 1) elementwise with tanh.
//
// The map is linear in F, and each output slice has
//   rank <= min(rank G, rank F_d, rank R),
//   columns in Col(G^T), rows in Row(R).
// rank_report() and subspace_residuals() check these numerically.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rev/errors.hpp"
#include "rev/transforms.hpp"

namespace rev {

// Stack of D square slices; slice d is T x T.
struct SimilarityTensor {
  std::vector<Matrix> slices;

  int steps() const { return slices.empty() ? 0 : static_cast<int>(slices.front().rows()); }
  int features() const { return static_cast<int>(slices.size()); }
};

struct ReverbKernelPair {
  Matrix R;  // T x T_f
  Matrix G;  // T x K_g
};

// Stack of D slices; slice d is K_g x T_f.
struct RehearsalField {
  std::vector<Matrix> slices;

  int generations() const { return slices.empty() ? 0 : static_cast<int>(slices.front().rows()); }
  int future_steps() const { return slices.empty() ? 0 : static_cast<int>(slices.front().cols()); }
  int features() const { return static_cast<int>(slices.size()); }
};

inline SimilarityTensor sequential_similarity(const Matrix& f) {
  if (!f.allFinite()) throw DomainError("sequential_similarity: non-finite representation");
  SimilarityTensor F;
  F.slices.reserve(static_cast<std::size_t>(f.cols()));
  for (Eigen::Index d = 0; d < f.cols(); ++d) F.slices.push_back(f.col(d) * f.col(d).transpose());
  return F;
}

inline Matrix bound_kernel(const Matrix& raw) { return raw.array().tanh().matrix(); }

inline RehearsalField reverberation_transform(const SimilarityTensor& F, const ReverbKernelPair& k) {
  const Eigen::Index T = k.R.rows();
  if (k.G.rows() != T) {
    throw ShapeError("reverberation_transform: R has " + std::to_string(T) + " rows but G has " +
                     std::to_string(k.G.rows()));
  }
  RehearsalField out;
  out.slices.reserve(F.slices.size());
  for (std::size_t d = 0; d < F.slices.size(); ++d) {
    const Matrix& slice = F.slices[d];
    if (slice.rows() != T || slice.cols() != T) {
      throw ShapeError("reverberation_transform: similarity slice " + std::to_string(d) + " is " +
                       std::to_string(slice.rows()) + "x" + std::to_string(slice.cols()) + ", kernels expect " +
                       std::to_string(T) + "x" + std::to_string(T));
    }
    out.slices.push_back(k.G.transpose() * slice * k.R);
  }
  return out;
}

inline constexpr double kRankTolerance = 1e-8;

// Number of singular values above rel_tol * sigma_max.
inline int numerical_rank(const Matrix& A, double rel_tol = kRankTolerance) {
  if (A.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(A);
  const Vector& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  const double cutoff = rel_tol * s(0);
  return static_cast<int>((s.array() > cutoff).count());
}

struct RankReport {
  int rank_R = 0;
  int rank_G = 0;
  int rank_out_max = 0;
  int violations = 0;  // slices with rank(out_d) > min(rank G, rank F_d, rank R)
};

inline RankReport rank_report(const ReverbKernelPair& k, const SimilarityTensor& F,
                              double rel_tol = kRankTolerance) {
  RankReport rep;
  rep.rank_R = numerical_rank(k.R, rel_tol);
  rep.rank_G = numerical_rank(k.G, rel_tol);
  const RehearsalField out = reverberation_transform(F, k);
  for (std::size_t d = 0; d < out.slices.size(); ++d) {
    const int r_out = numerical_rank(out.slices[d], rel_tol);
    const int bound = std::min({rep.rank_G, numerical_rank(F.slices[d], rel_tol), rep.rank_R});
    rep.rank_out_max = std::max(rep.rank_out_max, r_out);
    if (r_out > bound) ++rep.violations;
  }
  return rep;
}

struct SubspaceResiduals {
  double column = 0.0;  // out columns projected onto Col(G^T), relative
  double row = 0.0;     // out rows projected onto Row(R), relative
};

namespace detail {

// Relative residual of projecting the columns of B onto Col(A).
inline double projection_residual(const Matrix& A, const Matrix& B) {
  const double scale = std::max(B.norm(), 1e-300);
  if (A.size() == 0) return B.norm() / scale;
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(A);
  cod.setThreshold(kRankTolerance);
  const Matrix X = cod.solve(B);
  return (A * X - B).norm() / scale;
}

}  // namespace detail

inline SubspaceResiduals subspace_residuals(const Matrix& out_slice, const ReverbKernelPair& k) {
  return {detail::projection_residual(k.G.transpose(), out_slice),
          detail::projection_residual(k.R.transpose(), out_slice.transpose())};
}

}  // namespace rev
