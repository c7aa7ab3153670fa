#pragma once

#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <utility>

#include "nstab/lowrank.hpp"
#include "nstab/types.hpp"

namespace nstab {

/// Anything the low-rank integrator can step: the flow right-hand side
/// f evaluated at an arbitrary dense point W, given orthonormal bases for
/// the column and row spaces of W.  Structured flows use the bases for
/// their tangent projection; unstructured ones ignore them.
template <class F>
concept flow_evaluator = requires(const F& f, const Mat& W, const Mat& B) {
  { f(W, B, B) } -> std::convertible_to<Mat>;
};

/// Error control for the K/L/S sub-ODE integration inside one step.
struct SubstepControl {
  /// Local error bound per substep, measured against max(1, ||state||_F).
  double rtol = 1e-2;
  /// Substep budget per sub-ODE; exceeding it raises StepBudgetError so
  /// the caller can shrink the outer step instead of grinding.
  int max_substeps = 200;
  /// Singular values below noise_floor times the accumulated error
  /// estimate of the S sub-ODE are treated as unresolved by the rank
  /// truncation: the effective tolerance becomes
  /// max(tau_rank, noise_floor * error).  The error estimate tracks the
  /// motion of the dominant singular directions, which overstates the
  /// noise in the small ones by orders of magnitude; the default rescales
  /// it to the level actually observed in the tail.  Set to 0 to truncate
  /// at tau_rank exactly regardless of integration accuracy.
  double noise_floor = 1e-4;

  void validate() const {
    if (!(rtol > 0.0)) throw ArgumentError("substep control: rtol <= 0");
    if (max_substeps < 1)
      throw ArgumentError("substep control: max_substeps < 1");
    if (!(noise_floor >= 0.0))
      throw ArgumentError("substep control: noise_floor < 0");
  }
};

/// What one low-rank step did.
struct StepReport {
  double h = 0.0;
  Eigen::Index rank_before = 0;
  Eigen::Index rank_augmented = 0;
  Eigen::Index rank_after = 0;
  /// Root-sum-square of the singular values dropped at truncation.
  double discarded_tail = 0.0;
  /// Tolerance the truncation actually applied; exceeds tau_rank when the
  /// sub-ODE error estimate dominated it.
  double tau_effective = 0.0;
  /// Right-hand-side evaluations spent on the three sub-ODEs.
  long rhs_evals = 0;
  /// Left false by the integrator; the caller's acceptance test sets it.
  bool accepted = false;
};

namespace detail {

/// Orthonormal basis for the column span of M, padded deterministically by
/// the Householder reflectors when M is rank deficient.
inline Mat thin_q(const Mat& M, Eigen::Index cols) {
  Eigen::HouseholderQR<Mat> qr(M);
  return qr.householderQ() * Mat::Identity(M.rows(), cols);
}

/// Integrate Z' = rhs(Z) from 0 to h with an embedded Heun/Euler pair.
/// The Euler predictor doubles as the error estimate for the Heun update;
/// substep length adapts proportionally to the estimate.  Returns the
/// number of rhs evaluations.  When err_sum is given, the local error
/// estimates of the accepted substeps are accumulated into it.
template <class Rhs>
long integrate_block(Mat& Z, const Rhs& rhs, double h,
                     const SubstepControl& ctrl,
                     double* err_sum = nullptr) {
  long evals = 0;
  double t = 0.0;
  double hs = h;
  for (int used = 0; used < ctrl.max_substeps; ++used) {
    // Bail out once the traversal is hopelessly behind: if a sizable share
    // of the budget has moved only a small fraction of the span, finishing
    // at the average pace so far costs several budgets more.  The margin is
    // deliberately loose because the substep length may still accelerate.
    if ((used >= ctrl.max_substeps / 2 && t < 0.25 * h) ||
        (used >= ctrl.max_substeps / 4 && t < 0.05 * h))
      throw StepBudgetError(
          "integrator: sub-ODE substep budget projected to overflow");
    const bool last = hs >= h - t;
    const double step = last ? h - t : hs;
    const Mat F0 = rhs(Z);
    const Mat F1 = rhs((Z + step * F0).eval());
    evals += 2;
    const double err = 0.5 * step * (F1 - F0).norm();
    const double tol = ctrl.rtol * std::max(1.0, Z.norm());
    const bool ok = err <= tol;
    if (ok) {
      Z += (0.5 * step) * (F0 + F1);
      if (err_sum) *err_sum += err;
      if (last) return evals;
      t += step;
    }
    const double scale =
        0.9 * std::sqrt(tol / std::max(err, 1e-300));
    hs = step * std::clamp(scale, 0.1, 4.0);
  }
  throw StepBudgetError("integrator: sub-ODE exceeded its substep budget");
}

/// Basis-augmented substeps shared by the adaptive and fixed-rank steps:
/// each of the K, L and S systems is integrated over [0, h] with the flow
/// re-evaluated along its own sub-trajectory.
template <flow_evaluator F>
long augmented_step(const LowRankFactors& Y0, const F& f, double h,
                    const SubstepControl& ctrl, Mat& Uhat, Mat& Vhat,
                    Mat& S1hat, double* s_err = nullptr) {
  const Eigen::Index n = Y0.dim();
  const Eigen::Index r0 = Y0.rank();
  const Eigen::Index rho = std::min<Eigen::Index>(2 * r0, n);
  long evals = 0;

  // K system: K(t0) = U0 S0, K' = f(K V0^*) V0.
  Mat K = Y0.U * Y0.S;
  evals += integrate_block(
      K,
      [&](const Mat& Z) {
        return Mat(f(Z * Y0.V.adjoint(), thin_q(Z, r0), Y0.V) * Y0.V);
      },
      h, ctrl);
  Mat KU(n, 2 * r0);
  KU << K, Y0.U;
  Uhat = thin_q(KU, rho);

  // L system: L(t0) = V0 S0^*, L' = f(U0 L^*)^* U0.
  Mat L = Y0.V * Y0.S.adjoint();
  evals += integrate_block(
      L,
      [&](const Mat& Z) {
        return Mat(f(Y0.U * Z.adjoint(), Y0.U, thin_q(Z, r0)).adjoint() *
                   Y0.U);
      },
      h, ctrl);
  Mat LV(n, 2 * r0);
  LV << L, Y0.V;
  Vhat = thin_q(LV, rho);

  // S system in the augmented bases, from S(t0) = Uhat^* Y0 Vhat.
  S1hat = (Uhat.adjoint() * Y0.U) * Y0.S * (Y0.V.adjoint() * Vhat);
  evals += integrate_block(
      S1hat,
      [&](const Mat& Z) {
        return Mat(Uhat.adjoint() * f(Uhat * Z * Vhat.adjoint(), Uhat, Vhat) *
                   Vhat);
      },
      h, ctrl, s_err);
  return evals;
}

inline std::pair<LowRankFactors, StepReport> truncate_augmented(
    const Mat& Uhat, const Mat& Vhat, const Mat& S1hat, double h,
    Eigen::Index rank_before, Eigen::Index keep_exact, double tau_rank,
    bool renormalize) {
  Eigen::JacobiSVD<Mat> svd(S1hat,
                            Eigen::ComputeFullU | Eigen::ComputeFullV);
  const RVec sigma = svd.singularValues();
  const Eigen::Index rho = sigma.size();

  Eigen::Index r1;
  if (keep_exact > 0) {
    r1 = keep_exact;
    if (r1 > rho || sigma(r1 - 1) == 0.0)
      throw DegenerateRankError(
          "fixed_rank_step: requested rank is not present in the step");
  } else {
    // Smallest r1 whose discarded tail has root-sum-square <= tau.
    double tail2 = 0.0;
    r1 = rho;
    while (r1 > 0 &&
           std::sqrt(tail2 + sigma(r1 - 1) * sigma(r1 - 1)) <= tau_rank) {
      tail2 += sigma(r1 - 1) * sigma(r1 - 1);
      --r1;
    }
    if (r1 == 0)
      throw DegenerateRankError("adaptive_step: all singular mass truncated");
  }

  double tail2 = 0.0;
  for (Eigen::Index k = r1; k < rho; ++k) tail2 += sigma(k) * sigma(k);

  LowRankFactors Y1;
  Y1.U = Uhat * svd.matrixU().leftCols(r1);
  Y1.V = Vhat * svd.matrixV().leftCols(r1);
  RVec kept = sigma.head(r1);
  if (renormalize) kept /= kept.norm();
  Y1.S = kept.asDiagonal().toDenseMatrix().cast<cplx>();

  StepReport rep;
  rep.h = h;
  rep.rank_before = rank_before;
  rep.rank_augmented = rho;
  rep.rank_after = r1;
  rep.discarded_tail = std::sqrt(tail2);
  rep.tau_effective = keep_exact > 0 ? 0.0 : tau_rank;
  return {std::move(Y1), rep};
}

}  // namespace detail

/// One rank-adaptive step of size h for Y' = f(Y) from Y0 = U0 S0 V0^*:
/// integrate the K and L systems to augment the bases, advance the core,
/// then truncate the singular values whose tail mass stays below tau_rank.
/// Singular values the integration cannot resolve never survive: the
/// truncation tolerance is floored at the accumulated error estimate of
/// the S system (scaled by ctrl.noise_floor), capped so at least the top
/// singular value is kept.  When `renormalize` is set the returned core is
/// rescaled to unit Frobenius norm (the continuous flow preserves the
/// norm; the rescale removes the discretization drift exactly).
template <flow_evaluator F>
std::pair<LowRankFactors, StepReport> adaptive_step(
    const LowRankFactors& Y0, const F& f, double h, double tau_rank,
    const SubstepControl& ctrl = {}, bool renormalize = true) {
  if (tau_rank < 0.0) throw ArgumentError("adaptive_step: tau_rank < 0");
  ctrl.validate();
  Mat Uhat, Vhat, S1hat;
  double s_err = 0.0;
  const long evals =
      detail::augmented_step(Y0, f, h, ctrl, Uhat, Vhat, S1hat, &s_err);
  double tau_eff = std::max(tau_rank, ctrl.noise_floor * s_err);
  tau_eff = std::min(tau_eff, std::max(tau_rank, 0.5 * S1hat.norm()));
  auto out = detail::truncate_augmented(Uhat, Vhat, S1hat, h, Y0.rank(), 0,
                                        tau_eff, renormalize);
  out.second.rhs_evals = evals;
  return out;
}

/// Same augmented step but truncated to rank exactly r (the rank of Y0),
/// regardless of the tail mass.
template <flow_evaluator F>
std::pair<LowRankFactors, StepReport> fixed_rank_step(
    const LowRankFactors& Y0, const F& f, double h,
    const SubstepControl& ctrl = {}, bool renormalize = true) {
  ctrl.validate();
  Mat Uhat, Vhat, S1hat;
  const long evals = detail::augmented_step(Y0, f, h, ctrl, Uhat, Vhat, S1hat);
  auto out = detail::truncate_augmented(Uhat, Vhat, S1hat, h, Y0.rank(),
                                        Y0.rank(), 0.0, renormalize);
  out.second.rhs_evals = evals;
  return out;
}

}  // namespace nstab
