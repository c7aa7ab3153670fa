#pragma once

#include <cmath>
#include <limits>

#include "nstab/functional.hpp"
#include "nstab/lowrank.hpp"
#include "nstab/spectrum.hpp"
#include "nstab/types.hpp"

namespace nstab {

/// Right-hand side of the norm-constrained gradient flow at E:
/// f = -G + mu E with mu = Re<G, E>.  The mu term makes f tangent to the
/// unit sphere, so the continuous flow preserves ||E||_F = 1.
inline Mat flow_rhs(const Gradient& grad, const Mat& E) {
  if (grad.zero()) return Mat::Zero(E.rows(), E.cols());
  const Mat G = grad.dense();
  return -G + real_inner(G, E) * E;
}

/// The unstructured flow evaluated at an arbitrary perturbation W: one
/// eigensolve of A + eps W, then f(W) = -G(W) + Re<G(W), W> W.  The basis
/// arguments are ignored; they exist so structured and unstructured flows
/// share the integrator's evaluator interface.
struct DescentField {
  const Mat* A = nullptr;
  double eps = 0.0;
  Functional kind = Functional::square;
  const StabConfig* cfg = nullptr;
  mutable long evals = 0;  ///< eigensolves spent through this field

  Mat operator()(const Mat& W, const Mat& /*left*/,
                 const Mat& /*right*/) const {
    ++evals;
    const Spectrum spec =
        eig_triplets(*A + eps * W, activation_edge(kind, *cfg));
    const Gradient g = grad_functional(kind, spec, *cfg);
    return flow_rhs(g, W);
  }
};

/// Alignment measure 1 + Re<G, E> / ||G||_F.  Zero exactly when E is a
/// negative multiple of the gradient, which characterizes the flow's
/// stationary points on the unit sphere.
inline double stationarity_measure(const Gradient& grad,
                                   const LowRankFactors& E) {
  const double gn = grad.frobenius_norm();
  if (gn == 0.0)
    throw SolverError("stationarity_measure: gradient vanishes");
  return 1.0 + grad.real_inner_with(E) / gn;
}

/// Everything the iteration knows at one point of the flow.
struct FlowState {
  LowRankFactors E;
  Spectrum spec;       ///< spectrum of A + eps * (assembled perturbation)
  double value = 0.0;  ///< functional value at this point
  Gradient grad;
  double mu = 0.0;  ///< Re<G, E>
};

/// Evaluate functional, spectrum and gradient at E (unstructured flow).
/// Eigenvectors are extracted only for eigenvalues that can carry a
/// nonzero gradient coefficient.
inline FlowState evaluate_state(const Mat& A, double eps,
                                const LowRankFactors& E, Functional kind,
                                const StabConfig& cfg) {
  if (A.rows() != E.dim())
    throw DimensionError("evaluate_state: dimension mismatch");
  if (std::abs(E.norm() - 1.0) > 1e-8)
    throw ArgumentError("evaluate_state: perturbation must have unit norm");
  FlowState s;
  s.E = E;
  const Mat M = A + eps * E.dense();
  s.spec = eig_triplets(M, activation_edge(kind, cfg));
  s.value = eval_functional(kind, s.spec, cfg);
  s.grad = grad_functional(kind, s.spec, cfg);
  s.mu = s.grad.real_inner_with(E);
  return s;
}

}  // namespace nstab
