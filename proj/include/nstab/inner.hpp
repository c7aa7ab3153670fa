#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "nstab/flow.hpp"
#include "nstab/functional.hpp"
#include "nstab/integrator.hpp"
#include "nstab/lowrank.hpp"
#include "nstab/spectrum.hpp"
#include "nstab/structure.hpp"
#include "nstab/types.hpp"

namespace nstab {

struct InnerParams {
  double tol_inner = 1e-9;
  int maxit = 250;
  double tau_rank = 1e-8;
  double h0 = 0.1;
  double h_min = 1e-8;
  double grow = 1.2;
  double shrink = 0.5;
  Functional functional_kind = Functional::square;
  bool adaptive_rank = true;
  Eigen::Index fixed_rank = 0;  ///< used when adaptive_rank is false
  /// Local error bound for the sub-ODE integration inside each step.
  /// This is the starting value: whenever step-size rejection drives h
  /// far below h0, the loop quarters the bound (down to
  /// subflow_rtol_floor) and restarts from h0, so descent phases run
  /// cheap and the approach to a stationary point runs accurate.
  double subflow_rtol = 1e-2;
  /// Tightest sub-ODE error bound the rejection loop may fall back to.
  double subflow_rtol_floor = 1e-8;
  /// Substep budget per sub-ODE; exceeding it rejects the trial step.
  int subflow_budget = 200;
  /// When finite, stop as soon as the spectral abscissa of the perturbed
  /// matrix drops to this value or below.  Used by the outer iteration's
  /// certificate polish; NaN disables it.
  double stop_abscissa = std::numeric_limits<double>::quiet_NaN();
  /// Give up once the last futility_window accepted steps shrank the value
  /// by less than futility_rel of its current size (status: plateau).  The
  /// outer iteration only needs "still positive" from such runs, so there
  /// is no point grinding a flat region to maxit.  0 disables the check.
  int futility_window = 25;
  double futility_rel = 1e-4;

  void validate() const {
    if (!(tol_inner >= 0.0)) throw ArgumentError("inner: tol_inner < 0");
    if (maxit < 1) throw ArgumentError("inner: maxit < 1");
    if (!(tau_rank >= 0.0)) throw ArgumentError("inner: tau_rank < 0");
    if (!(h0 > 0.0) || !(h_min > 0.0))
      throw ArgumentError("inner: step sizes must be positive");
    if (!(shrink > 0.0 && shrink < 1.0 && grow > 1.0))
      throw ArgumentError("inner: need 0 < shrink < 1 < grow");
    if (!adaptive_rank && fixed_rank < 1)
      throw ArgumentError("inner: fixed rank must be at least 1");
    if (!(subflow_rtol_floor > 0.0) || subflow_rtol_floor > subflow_rtol)
      throw ArgumentError("inner: need 0 < subflow_rtol_floor <= subflow_rtol");
    if (futility_window < 0 || !(futility_rel >= 0.0))
      throw ArgumentError("inner: negative futility parameters");
    SubstepControl{subflow_rtol, subflow_budget}.validate();
  }
};

enum class InnerStatus {
  functional_zero,  ///< value dropped to tol_inner
  stationary,       ///< aligned with the gradient and value stalled
  maxit,
  stalled,           ///< step size underflowed h_min
  abscissa_reached,  ///< stop_abscissa target met
  plateau,           ///< descent flatlined far from zero and stationarity
};

inline const char* to_string(InnerStatus s) {
  switch (s) {
    case InnerStatus::functional_zero: return "functional_zero";
    case InnerStatus::stationary: return "stationary";
    case InnerStatus::maxit: return "maxit";
    case InnerStatus::stalled: return "stalled";
    case InnerStatus::abscissa_reached: return "abscissa_reached";
    case InnerStatus::plateau: return "plateau";
  }
  return "unknown";
}

struct InnerResult {
  /// Factored iterate: the perturbation itself (unstructured) or the
  /// low-rank Y whose projection is the perturbation (structured).
  LowRankFactors E_star;
  /// Assembled unit-norm perturbation (already projected when structured).
  Mat E_matrix;
  double value = 0.0;
  /// Norm of the effective gradient (projected when structured).
  double grad_norm = 0.0;
  /// Alignment measure at the final point; 0 when the gradient vanished.
  double stationarity = 0.0;
  std::vector<std::pair<int, Eigen::Index>> rank_history;
  std::vector<double> value_history;
  Eigen::Index max_rank = 0;
  int iterations = 0;  ///< trial steps attempted
  int accepted = 0;
  /// Eigensolves spent inside the flow field (sub-ODE evaluations).
  long rhs_evals = 0;
  InnerStatus status = InnerStatus::maxit;
  std::vector<cplx> final_spectrum;
  double final_abscissa = 0.0;
};

namespace detail {

/// Type-erased flow evaluator so the structured and unstructured loops
/// share one integrator call site.  The indirection is negligible next to
/// the eigensolve inside every evaluation.
struct ErasedRhs {
  std::function<Mat(const Mat&, const Mat&, const Mat&)> f;
  Mat operator()(const Mat& W, const Mat& Lb, const Mat& Rb) const {
    return f(W, Lb, Rb);
  }
};

/// Everything the step loop needs at one accepted point.
struct IterPoint {
  LowRankFactors Y;
  Mat E;  ///< assembled unit-norm perturbation
  Spectrum spec;
  double value = 0.0;
  Gradient grad;
  double gnorm = 0.0;  ///< effective gradient norm
  double align = 0.0;  ///< effective stationarity measure
};

inline IterPoint make_point(const Mat& A, double eps, LowRankFactors Y,
                            Mat E, const StructurePattern& pattern,
                            Functional kind, const StabConfig& cfg,
                            double tol_inner) {
  IterPoint p;
  p.Y = std::move(Y);
  p.E = std::move(E);
  if (std::abs(p.E.norm() - 1.0) > 1e-8)
    throw ArgumentError("inner: perturbation must have unit norm");
  const Mat M = A + eps * p.E;
  p.spec = eig_triplets(M, activation_edge(kind, cfg));
  p.value = eval_functional(kind, p.spec, cfg);
  p.grad = grad_functional(kind, p.spec, cfg);
  if (pattern.trivial()) {
    p.gnorm = p.grad.frobenius_norm();
    p.align = p.gnorm > 0.0 ? stationarity_measure(p.grad, p.Y) : 0.0;
  } else {
    const Mat PG = project(pattern, p.grad.dense());
    p.gnorm = PG.norm();
    p.align =
        p.gnorm > 0.0 ? structured_stationarity_measure(PG, p.E) : 0.0;
  }
  if (p.gnorm == 0.0 && p.value > tol_inner)
    throw SolverError("inner: gradient vanished at a positive value");
  return p;
}

/// Extend orthonormal columns of U to `target` columns with deterministic
/// complement directions (Gram-Schmidt against coordinate vectors).
inline void pad_orthonormal(Mat& U, Eigen::Index target) {
  const Eigen::Index n = U.rows();
  if (U.cols() >= target) return;
  Mat out(n, target);
  out.leftCols(U.cols()) = U;
  Eigen::Index have = U.cols();
  for (Eigen::Index j = 0; j < n && have < target; ++j) {
    Vec v = Vec::Zero(n);
    v(j) = 1.0;
    v -= out.leftCols(have) * (out.leftCols(have).adjoint() * v);
    v -= out.leftCols(have) * (out.leftCols(have).adjoint() * v);
    const double nv = v.norm();
    if (nv > 1e-8) out.col(have++) = v / nv;
  }
  if (have < target)
    throw SolverError("pad_orthonormal: could not complete the basis");
  U = out;
}

}  // namespace detail

/// Initial iterate for the flow: the negative normalized gradient at zero
/// perturbation, truncated to rank min(active terms, max(2, m_delta)), or
/// padded/truncated to exactly the requested rank in fixed-rank mode.
/// Structured runs build Y0 from the projected gradient instead and scale
/// so the projection of Y0 has unit norm.
inline LowRankFactors default_init(const Mat& A, const StabConfig& cfg,
                                   const InnerParams& params,
                                   const StructurePattern& pattern =
                                       StructurePattern::none()) {
  const Eigen::Index n = A.rows();
  const Functional kind = params.functional_kind;
  const Spectrum spec = eig_triplets(A, activation_edge(kind, cfg));
  const Gradient grad = grad_functional(kind, spec, cfg);
  if (grad.zero())
    throw ArgumentError(
        "default_init: matrix is already stable at the requested margin");

  const Eigen::Index m_delta = count_delta_unstable(spec, cfg.delta);
  const Eigen::Index cap = std::max<Eigen::Index>(2, m_delta);
  if (!params.adaptive_rank && params.fixed_rank > n)
    throw ArgumentError("default_init: fixed rank exceeds dimension");

  // Compact SVD of the (projected) gradient direction.
  Mat Ug, Vg;
  RVec sigma;
  if (pattern.trivial()) {
    // G = left diag(gamma) right^*; orthonormalize the factors and take
    // the SVD of the small core.
    const Eigen::Index m = grad.term_count();
    const Mat Qx = detail::thin_q(grad.left, m);
    const Mat Qy = detail::thin_q(grad.right, m);
    Mat core = Qx.adjoint() * grad.left;
    for (Eigen::Index k = 0; k < m; ++k) core.col(k) *= grad.gamma[k];
    core = core * (Qy.adjoint() * grad.right).adjoint();
    Eigen::JacobiSVD<Mat> svd(core,
                              Eigen::ComputeThinU | Eigen::ComputeThinV);
    Ug = Qx * svd.matrixU();
    Vg = Qy * svd.matrixV();
    sigma = svd.singularValues();
  } else {
    const Mat PG = project(pattern, grad.dense());
    if (PG.norm() == 0.0)
      throw ArgumentError(
          "default_init: gradient has no component in the pattern");
    Eigen::BDCSVD<Mat> svd(PG, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Ug = svd.matrixU();
    Vg = svd.matrixV();
    sigma = svd.singularValues();
  }

  // Numerical rank of the gradient, then the adaptive cap or the exact
  // fixed-rank target.
  Eigen::Index q = 0;
  while (q < sigma.size() && sigma(q) > sigma(0) * 1e-14) ++q;
  Eigen::Index r = params.adaptive_rank
                       ? std::min(q, cap)
                       : std::min(params.fixed_rank, n);
  const Eigen::Index kept = std::min(q, r);

  LowRankFactors Y;
  Y.U = -Ug.leftCols(kept);
  Y.V = Vg.leftCols(kept);
  RVec s = sigma.head(kept);
  if (r > kept) {
    // Fixed-rank target above the gradient's rank: pad with orthonormal
    // complement directions carrying small weight.
    detail::pad_orthonormal(Y.U, r);
    detail::pad_orthonormal(Y.V, r);
    RVec padded(r);
    padded.head(kept) = s;
    padded.tail(r - kept).setConstant(0.1 * s(kept - 1));
    s = padded;
  }
  s /= s.norm();
  Y.S = s.asDiagonal().toDenseMatrix().cast<cplx>();

  if (!pattern.trivial()) {
    const double c = project(pattern, Y.dense()).norm();
    if (c == 0.0)
      throw ArgumentError(
          "default_init: projected initial perturbation vanished");
    Y.S /= c;
  }
  return Y;
}

/// Integrate the norm-constrained gradient flow at fixed eps until the
/// functional reaches zero, the iterate is stationary, or the budget runs
/// out.  Steps are accepted only when the functional does not increase;
/// rejected steps halve h, accepted ones grow it up to 10 h0.
inline InnerResult inner_iteration(const Mat& A, double eps,
                                   const std::optional<LowRankFactors>& E0,
                                   const StabConfig& cfg,
                                   const InnerParams& params,
                                   const StructurePattern& pattern =
                                       StructurePattern::none()) {
  params.validate();
  cfg.validate();
  if (!(eps > 0.0)) throw ArgumentError("inner_iteration: eps must be > 0");
  if (A.rows() != A.cols())
    throw DimensionError("inner_iteration: matrix must be square");
  const bool structured = !pattern.trivial();
  if (structured) require_in_pattern(pattern, A);
  if (!params.adaptive_rank && E0.has_value() &&
      E0->rank() != params.fixed_rank)
    throw ArgumentError("inner_iteration: initial rank disagrees with the "
                        "fixed-rank setting");
  const Functional kind = params.functional_kind;
  const double h_max = 10.0 * params.h0;

  // One flow evaluator serves the whole run: it is a pure function of its
  // arguments, shared by every trial step below.
  auto descent =
      std::make_shared<DescentField>(DescentField{&A, eps, kind, &cfg});
  auto tangent = std::make_shared<StructuredField>(
      StructuredField{&A, eps, kind, &cfg, &pattern});
  detail::ErasedRhs field;
  if (structured)
    field.f = [tangent](const Mat& W, const Mat& Lb, const Mat& Rb) {
      return (*tangent)(W, Lb, Rb);
    };
  else
    field.f = [descent](const Mat& W, const Mat& Lb, const Mat& Rb) {
      return (*descent)(W, Lb, Rb);
    };
  auto field_evals = [&]() {
    return structured ? tangent->evals : descent->evals;
  };

  auto assemble = [&](const LowRankFactors& Y) {
    return structured ? project(pattern, Y.dense()) : Y.dense();
  };

  auto run = [&](LowRankFactors Y0) {
    InnerResult res;
    const long evals_at_entry = field_evals();
    Mat E0mat = assemble(Y0);
    detail::IterPoint cur =
        detail::make_point(A, eps, std::move(Y0), std::move(E0mat), pattern,
                           kind, cfg, params.tol_inner);
    res.value_history.push_back(cur.value);
    res.rank_history.emplace_back(0, cur.Y.rank());

    double h = params.h0;
    int streak = 0;
    int clean_accepts = 0;
    SubstepControl ctrl{params.subflow_rtol, params.subflow_budget};
    res.status = InnerStatus::maxit;

    auto finished = [&]() {
      if (std::isfinite(params.stop_abscissa) &&
          cur.spec.abscissa() <= params.stop_abscissa) {
        res.status = InnerStatus::abscissa_reached;
        return true;
      }
      if (cur.value <= params.tol_inner) {
        res.status = InnerStatus::functional_zero;
        return true;
      }
      if (streak >= 3) {
        res.status = InnerStatus::stationary;
        return true;
      }
      // Far from both zero and stationarity, yet the accepted values have
      // stopped moving: grinding on will not change the caller's picture.
      if (params.futility_window > 0 && cur.align > 1e-3 &&
          res.value_history.size() > size_t(params.futility_window)) {
        const size_t m = res.value_history.size();
        const double v_then = res.value_history[m - 1 - params.futility_window];
        if (v_then - cur.value < params.futility_rel * cur.value) {
          res.status = InnerStatus::plateau;
          return true;
        }
      }
      return false;
    };

    while (!finished() && res.iterations < params.maxit) {
      ++res.iterations;
      bool step_ok = true;
      LowRankFactors Yt;
      try {
        auto stepped =
            params.adaptive_rank
                ? adaptive_step(cur.Y, field, h, params.tau_rank, ctrl,
                                !structured)
                : fixed_rank_step(cur.Y, field, h, ctrl, !structured);
        Yt = std::move(stepped.first);
      } catch (const StepBudgetError&) {
        // The sub-ODEs could not traverse [0, h] within budget; treat the
        // trial as rejected and shrink.
        step_ok = false;
      }

      bool accepted_one = false;
      if (step_ok) {
        Mat Et;
        if (structured) {
          Et = project(pattern, Yt.dense());
          const double c = Et.norm();
          if (c == 0.0)
            throw DegenerateRankError(
                "inner_iteration: projected step vanished");
          Yt.S /= c;
          Et /= c;
        } else {
          Et = Yt.dense();
        }
        detail::IterPoint trial =
            detail::make_point(A, eps, std::move(Yt), std::move(Et),
                               pattern, kind, cfg, params.tol_inner);
        if (trial.value <= cur.value) {
          const double rel = cur.value > 0.0
                                 ? (cur.value - trial.value) / cur.value
                                 : 0.0;
          streak = (trial.align <= 1e-6 && rel <= params.tol_inner)
                       ? streak + 1
                       : 0;
          cur = std::move(trial);
          ++res.accepted;
          res.value_history.push_back(cur.value);
          res.rank_history.emplace_back(res.iterations, cur.Y.rank());
          h = std::min(params.grow * h, h_max);
          accepted_one = true;
          // Any tightening below is local to a stiff spot: once steps are
          // accepted cleanly again, walk the accuracy back up so the rest
          // of the trajectory is not billed for one bad neighborhood.
          if (ctrl.rtol < params.subflow_rtol && ++clean_accepts >= 4) {
            ctrl.rtol = std::min(4.0 * ctrl.rtol, params.subflow_rtol);
            clean_accepts = 0;
          }
        }
      }
      if (!accepted_one) {
        clean_accepts = 0;
        h *= params.shrink;
        // A step size collapsing far below h0 means the rejections are
        // driven by integration noise, not by the flow itself: tighten
        // the sub-ODE accuracy and retry at full step before giving up.
        if (h < params.h0 / 64.0 && ctrl.rtol > params.subflow_rtol_floor) {
          ctrl.rtol = std::max(0.25 * ctrl.rtol, params.subflow_rtol_floor);
          h = params.h0;
        } else if (h < params.h_min) {
          res.status = InnerStatus::stalled;
          break;
        }
      }
    }

    res.E_star = cur.Y;
    res.E_matrix = cur.E;
    res.value = cur.value;
    res.grad_norm = cur.gnorm;
    res.stationarity = cur.align;
    for (const auto& [it, r] : res.rank_history)
      res.max_rank = std::max(res.max_rank, r);
    res.rhs_evals = field_evals() - evals_at_entry;
    res.final_spectrum.reserve(cur.spec.triplets.size());
    for (const auto& t : cur.spec.triplets)
      res.final_spectrum.push_back(t.lambda);
    res.final_abscissa = cur.spec.abscissa();
    return res;
  };

  LowRankFactors Y0 =
      E0.has_value() ? *E0 : default_init(A, cfg, params, pattern);
  try {
    return run(std::move(Y0));
  } catch (const DegenerateRankError&) {
    // One restart from scratch, then give up.
    return run(default_init(A, cfg, params, pattern));
  }
}

}  // namespace nstab
