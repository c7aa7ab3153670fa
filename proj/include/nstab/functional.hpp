#pragma once

#include <cmath>
#include <vector>

#include "nstab/lowrank.hpp"
#include "nstab/spectrum.hpp"
#include "nstab/types.hpp"

namespace nstab {

/// Stability margins.  `delta` is the target margin (eigenvalues must end
/// up with real part below -delta); `delta1 < delta2` bound the smoothing
/// window of the Hermite-weighted functional.
struct StabConfig {
  double delta = 1e-3;
  double delta1 = 1e-3;
  double delta2 = 2e-3;

  void validate() const {
    if (!(delta >= 0.0)) throw ArgumentError("config: delta must be >= 0");
    if (!(0.0 < delta1 && delta1 < delta2))
      throw ArgumentError("config: need 0 < delta1 < delta2");
  }
};

/// Which eigenvalue penalty drives the flow.
enum class Functional { square, hermite };

/// Gradient of an eigenvalue penalty with respect to the perturbation,
/// kept in factored form: G = sum_i gamma_i x_i y_i^* over the active
/// eigenvalues, with unit left/right eigenvectors x_i, y_i.
struct Gradient {
  Eigen::Index n = 0;
  std::vector<double> gamma;
  Mat left;   ///< columns x_i
  Mat right;  ///< columns y_i

  Eigen::Index term_count() const { return (Eigen::Index)gamma.size(); }
  bool zero() const { return gamma.empty(); }

  Mat dense() const {
    Mat G = Mat::Zero(n, n);
    for (Eigen::Index k = 0; k < term_count(); ++k)
      G += gamma[k] * (left.col(k) * right.col(k).adjoint());
    return G;
  }

  /// G * X via the factored form, O(n m cols).
  Mat apply(const Mat& X) const {
    if (zero()) return Mat::Zero(n, X.cols());
    Mat W = right.adjoint() * X;
    for (Eigen::Index k = 0; k < term_count(); ++k) W.row(k) *= gamma[k];
    return left * W;
  }

  /// G^* * X via the factored form.
  Mat apply_adjoint(const Mat& X) const {
    if (zero()) return Mat::Zero(n, X.cols());
    Mat W = left.adjoint() * X;
    for (Eigen::Index k = 0; k < term_count(); ++k) W.row(k) *= gamma[k];
    return right * W;
  }

  /// Frobenius norm from the m x m Gram matrices of the factors.
  double frobenius_norm() const {
    if (zero()) return 0.0;
    const Mat Gx = left.adjoint() * left;
    const Mat Gy = right.adjoint() * right;
    double s = 0.0;
    for (Eigen::Index i = 0; i < term_count(); ++i)
      for (Eigen::Index j = 0; j < term_count(); ++j)
        s += gamma[i] * gamma[j] * (Gx(i, j) * Gy(j, i)).real();
    return std::sqrt(std::max(0.0, s));
  }

  /// Re <G, U S V^*> without assembling either side.
  double real_inner_with(const LowRankFactors& E) const {
    double s = 0.0;
    for (Eigen::Index k = 0; k < term_count(); ++k) {
      const cplx t =
          (left.col(k).adjoint() * E.U) * E.S * (E.V.adjoint() * right.col(k));
      s += gamma[k] * t.real();
    }
    return s;
  }
};

/// Smooth switch: 0 below -delta2, 1 above -delta1, cubic Hermite blend in
/// between (monotonically non-decreasing, C^1).
inline double psi(double x, const StabConfig& cfg) {
  if (x <= -cfg.delta2) return 0.0;
  if (x >= -cfg.delta1) return 1.0;
  const double w = cfg.delta1 - cfg.delta2;
  const double t = x + cfg.delta2;
  return t * t * (2.0 * x + 3.0 * cfg.delta1 - cfg.delta2) / (w * w * w);
}

inline double psi_prime(double x, const StabConfig& cfg) {
  if (x <= -cfg.delta2 || x >= -cfg.delta1) return 0.0;
  const double w = cfg.delta1 - cfg.delta2;
  return 6.0 * (x + cfg.delta2) * (x + cfg.delta1) / (w * w * w);
}

/// Half the sum of squared positive parts of Re(lambda) + delta.  Exactly
/// zero iff every eigenvalue clears the margin.
inline double eval_square(const Spectrum& spec, const StabConfig& cfg) {
  double v = 0.0;
  for (const auto& t : spec.triplets) {
    const double p = t.lambda.real() + cfg.delta;
    if (p > 0.0) v += 0.5 * p * p;
  }
  return v;
}

/// Hermite-weighted penalty: half the sum of psi(rho) (rho + delta2)_+^2
/// over rho = Re(lambda).  Zero iff every rho is at or below -delta2.
inline double eval_hermite(const Spectrum& spec, const StabConfig& cfg) {
  double v = 0.0;
  for (const auto& t : spec.triplets) {
    const double rho = t.lambda.real();
    const double p = rho + cfg.delta2;
    if (p > 0.0) v += 0.5 * psi(rho, cfg) * p * p;
  }
  return v;
}

namespace detail {

template <class CoefFn>
Gradient gradient_from(const Spectrum& spec, CoefFn&& coefficient,
                       const char* what) {
  Gradient g;
  g.n = spec.n;
  std::vector<Eigen::Index> active;
  for (Eigen::Index i = 0; i < (Eigen::Index)spec.triplets.size(); ++i) {
    const EigenTriplet& t = spec.triplets[i];
    const double numer = coefficient(t.lambda.real());
    if (numer <= 0.0) continue;
    if (!t.has_vectors())
      throw SolverError(std::string(what) +
                        ": active eigenvalue lacks eigenvectors");
    if (t.condition < kConditionFloor)
      throw IllConditionedError(
          std::string(what) +
          ": active eigenvalue pairing is too ill conditioned");
    active.push_back(i);
  }
  g.gamma.reserve(active.size());
  g.left.resize(spec.n, (Eigen::Index)active.size());
  g.right.resize(spec.n, (Eigen::Index)active.size());
  for (Eigen::Index k = 0; k < (Eigen::Index)active.size(); ++k) {
    const EigenTriplet& t = spec.triplets[active[k]];
    g.gamma.push_back(coefficient(t.lambda.real()) / t.condition);
    g.left.col(k) = t.left;
    g.right.col(k) = t.right;
  }
  return g;
}

}  // namespace detail

/// Gradient of eval_square: gamma_i = (Re lambda_i + delta)_+ / (x_i^* y_i).
inline Gradient grad_square(const Spectrum& spec, const StabConfig& cfg) {
  return detail::gradient_from(
      spec, [&](double rho) { return std::max(0.0, rho + cfg.delta); },
      "grad_square");
}

/// Gradient of eval_hermite: coefficient
/// (rho+delta2)_+ (psi'(rho)(rho+delta2)_+ + 2 psi(rho)) / 2 per pairing.
inline Gradient grad_hermite(const Spectrum& spec, const StabConfig& cfg) {
  return detail::gradient_from(
      spec,
      [&](double rho) {
        const double p = std::max(0.0, rho + cfg.delta2);
        if (p <= 0.0) return 0.0;
        return 0.5 * p * (psi_prime(rho, cfg) * p + 2.0 * psi(rho, cfg));
      },
      "grad_hermite");
}

inline double eval_functional(Functional kind, const Spectrum& spec,
                              const StabConfig& cfg) {
  return kind == Functional::square ? eval_square(spec, cfg)
                                    : eval_hermite(spec, cfg);
}

inline Gradient grad_functional(Functional kind, const Spectrum& spec,
                                const StabConfig& cfg) {
  return kind == Functional::square ? grad_square(spec, cfg)
                                    : grad_hermite(spec, cfg);
}

/// Eigenvalue activation edge for a functional: vectors are only needed
/// for eigenvalues with real part above this.
inline double activation_edge(Functional kind, const StabConfig& cfg) {
  return kind == Functional::square ? -cfg.delta : -cfg.delta2;
}

/// Convenience evaluation at M = A + eps * E (dense E), recomputing the
/// spectrum.  Used by tests and one-shot callers; the iteration keeps its
/// own spectrum instead.
inline double eval_functional_at(Functional kind, const Mat& A, const Mat& E,
                                 double eps, const StabConfig& cfg) {
  if (A.rows() != E.rows() || A.cols() != E.cols())
    throw DimensionError("eval_functional_at: A and E differ in shape");
  const double drop = std::numeric_limits<double>::infinity();
  const Spectrum spec = eig_triplets(A + eps * E, drop);
  return eval_functional(kind, spec, cfg);
}

}  // namespace nstab
