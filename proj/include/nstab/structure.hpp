#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "nstab/flow.hpp"
#include "nstab/functional.hpp"
#include "nstab/lowrank.hpp"
#include "nstab/types.hpp"

namespace nstab {

/// A linear subspace of matrices together with its orthogonal projection
/// under the real Frobenius inner product.
struct StructurePattern {
  enum class Kind { none, sparsity, toeplitz, real_entries };

  Kind kind = Kind::none;
  Mask mask;  ///< sparsity only
  std::string description = "none";

  bool trivial() const { return kind == Kind::none; }

  static StructurePattern none() { return {}; }
  static StructurePattern sparsity(Mask m) {
    StructurePattern p;
    p.kind = Kind::sparsity;
    p.mask = std::move(m);
    p.description = "sparsity pattern";
    return p;
  }
  static StructurePattern toeplitz() {
    StructurePattern p;
    p.kind = Kind::toeplitz;
    p.description = "toeplitz";
    return p;
  }
  static StructurePattern real_entries() {
    StructurePattern p;
    p.kind = Kind::real_entries;
    p.description = "real entries";
    return p;
  }
};

/// Orthogonal projection of M onto the pattern subspace.  Off-pattern
/// entries of a sparsity projection are exactly zero; a Toeplitz
/// projection replaces every diagonal by its mean; real_entries drops the
/// imaginary part.
inline Mat project(const StructurePattern& p, const Mat& M) {
  switch (p.kind) {
    case StructurePattern::Kind::none:
      return M;
    case StructurePattern::Kind::sparsity: {
      if (p.mask.rows() != M.rows() || p.mask.cols() != M.cols())
        throw DimensionError("project: mask does not match matrix");
      Mat P = Mat::Zero(M.rows(), M.cols());
      for (Eigen::Index j = 0; j < M.cols(); ++j)
        for (Eigen::Index i = 0; i < M.rows(); ++i)
          if (p.mask(i, j)) P(i, j) = M(i, j);
      return P;
    }
    case StructurePattern::Kind::toeplitz: {
      if (M.rows() != M.cols())
        throw DimensionError("project: toeplitz needs a square matrix");
      const Eigen::Index n = M.rows();
      Mat P(n, n);
      for (Eigen::Index d = -(n - 1); d <= n - 1; ++d) {
        const Eigen::Index len = n - (d < 0 ? -d : d);
        cplx sum = 0.0;
        for (Eigen::Index k = 0; k < len; ++k)
          sum += d >= 0 ? M(k, k + d) : M(k - d, k);
        const cplx mean = sum / double(len);
        for (Eigen::Index k = 0; k < len; ++k)
          (d >= 0 ? P(k, k + d) : P(k - d, k)) = mean;
      }
      return P;
    }
    case StructurePattern::Kind::real_entries:
      return M.real().cast<cplx>();
  }
  throw ArgumentError("project: unknown pattern kind");
}

/// Check that A itself lies in the pattern subspace, which every
/// structured solve assumes (the perturbed matrix must stay in it).
inline void require_in_pattern(const StructurePattern& p, const Mat& A,
                               double tol = 1e-12) {
  if (p.trivial()) return;
  const double scale = std::max(1.0, A.norm());
  if ((project(p, A) - A).norm() > tol * scale)
    throw ArgumentError("structured solve: matrix does not lie in pattern '" +
                        p.description + "'");
}

/// Projection onto the tangent space of the rank-r manifold whose column
/// and row spaces are spanned by the orthonormal bases Lb, Rb:
/// P(M) = M - (I - Lb Lb^*) M (I - Rb Rb^*).
inline Mat tangent_project_bases(const Mat& Lb, const Mat& Rb, const Mat& M) {
  const Mat W = M - Lb * (Lb.adjoint() * M);
  return M - W + (W * Rb) * Rb.adjoint();
}

/// Tangent projection at Y = U S V^*.
inline Mat tangent_project(const LowRankFactors& Y, const Mat& M) {
  if (M.rows() != Y.dim() || M.cols() != Y.dim())
    throw DimensionError("tangent_project: dimension mismatch");
  return tangent_project_bases(Y.U, Y.V, M);
}

/// The structured flow evaluated at an arbitrary point W with orthonormal
/// column/row bases Lb, Rb: E = proj(W), one eigensolve of A + eps E, then
/// f(W) = -P G + Re<P G, E> W where P is the tangent projection onto the
/// given bases and G the functional gradient at E.
struct StructuredField {
  const Mat* A = nullptr;
  double eps = 0.0;
  Functional kind = Functional::square;
  const StabConfig* cfg = nullptr;
  const StructurePattern* pattern = nullptr;
  mutable long evals = 0;  ///< eigensolves spent through this field

  Mat operator()(const Mat& W, const Mat& Lb, const Mat& Rb) const {
    ++evals;
    const Mat E = project(*pattern, W);
    const Spectrum spec =
        eig_triplets(*A + eps * E, activation_edge(kind, *cfg));
    const Gradient g = grad_functional(kind, spec, *cfg);
    if (g.zero()) return Mat::Zero(W.rows(), W.cols());
    const Mat PG = tangent_project_bases(Lb, Rb, g.dense());
    return -PG + real_inner(PG, E) * W;
  }
};

/// Dense rate of change of Y under the structured flow, with the tangent
/// projection taken at Y itself.
inline Mat structured_rhs(const LowRankFactors& Y, const Mat& A, double eps,
                          const StabConfig& cfg,
                          const StructurePattern& pattern, Functional kind) {
  const StructuredField f{&A, eps, kind, &cfg, &pattern};
  return f(Y.dense(), Y.U, Y.V);
}

/// Everything the structured iteration knows at one point: the factored Y,
/// its projected (dense) perturbation, and spectrum/value/gradient at
/// A + eps * E_proj.
struct YState {
  LowRankFactors Y;
  Mat E_proj;
  Spectrum spec;
  double value = 0.0;
  Gradient grad;
};

/// Evaluate the structured state at Y.  Callers keep ||proj(Y)|| = 1 by
/// rescaling Y after accepted steps; this checks that invariant.
inline YState evaluate_structured_state(const Mat& A, double eps,
                                        const LowRankFactors& Y,
                                        const StructurePattern& pattern,
                                        Functional kind,
                                        const StabConfig& cfg) {
  if (A.rows() != Y.dim())
    throw DimensionError("evaluate_structured_state: dimension mismatch");
  YState s;
  s.Y = Y;
  s.E_proj = project(pattern, Y.dense());
  if (std::abs(s.E_proj.norm() - 1.0) > 1e-8)
    throw ArgumentError(
        "evaluate_structured_state: projected perturbation must have unit "
        "norm");
  const Mat M = A + eps * s.E_proj;
  s.spec = eig_triplets(M, activation_edge(kind, cfg));
  s.value = eval_functional(kind, s.spec, cfg);
  s.grad = grad_functional(kind, s.spec, cfg);
  return s;
}

/// Alignment of the projected gradient with E = proj(Y):
/// 1 + Re<PG, E> / ||PG||_F, zero exactly at stationary points of the
/// structured gradient system.  PG is the dense projected gradient.
inline double structured_stationarity_measure(const Mat& PG,
                                              const Mat& E_proj) {
  const double gn = PG.norm();
  if (gn == 0.0)
    throw SolverError(
        "structured_stationarity_measure: projected gradient vanishes");
  return 1.0 + real_inner(PG, E_proj) / gn;
}

}  // namespace nstab
