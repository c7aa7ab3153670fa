#pragma once

#include "nstab/types.hpp"

namespace nstab {

/// Rank-r factorization E = U S V^* with orthonormal U (n x r) and
/// V (n x r); S (r x r) is invertible but not necessarily diagonal.
struct LowRankFactors {
  Mat U, S, V;

  Eigen::Index rank() const { return S.rows(); }
  Eigen::Index dim() const { return U.rows(); }

  /// Frobenius norm; equals ||S||_F because U and V have orthonormal
  /// columns.
  double norm() const { return S.norm(); }

  Mat dense() const { return U * (S * V.adjoint()); }

  /// E * X without forming E.
  Mat apply(const Mat& X) const { return U * (S * (V.adjoint() * X)); }

  /// E^* * X without forming E.
  Mat apply_adjoint(const Mat& X) const {
    return V * (S.adjoint() * (U.adjoint() * X));
  }
};

}  // namespace nstab
