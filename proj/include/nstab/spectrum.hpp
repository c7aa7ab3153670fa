#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "nstab/types.hpp"

namespace nstab {

/// Condition below which an eigenvalue pairing is flagged as unreliable.
inline constexpr double kConditionFloor = 1e-12;

/// One eigenvalue with (optionally) its unit left/right eigenvector pair.
///
/// After phase normalization the pairing product x^* y is real and
/// nonnegative; it is stored in `condition` (1 for normal matrices, small
/// for sensitive eigenvalues).
struct EigenTriplet {
  cplx lambda;
  Vec left;   ///< x with x^* A = lambda x^*, ||x|| = 1; empty if not computed
  Vec right;  ///< y with A y = lambda y, ||y|| = 1; empty if not computed
  double condition = 0.0;
  bool ill_conditioned = false;

  bool has_vectors() const { return left.size() > 0 && right.size() > 0; }
};

/// Full spectrum of a square matrix, sorted by descending real part
/// (ties broken by descending imaginary part).
struct Spectrum {
  Eigen::Index n = 0;
  std::vector<EigenTriplet> triplets;

  /// Largest real part over all eigenvalues.
  double abscissa() const { return triplets.front().lambda.real(); }
};

/// Number of eigenvalues with Re(lambda) > -delta.
inline int count_delta_unstable(const Spectrum& spec, double delta) {
  if (delta < 0.0) throw ArgumentError("count_delta_unstable: delta < 0");
  int m = 0;
  for (const auto& t : spec.triplets)
    if (t.lambda.real() > -delta) ++m;
  return m;
}

namespace detail {

/// Right eigenvector of an upper-triangular T for the eigenvalue at
/// diagonal index i, by back substitution on (T - lambda I) v = 0 with
/// v(i) = 1.  Small pivots are clamped the way LAPACK's trevc does.
inline Vec tri_right_vec(const Mat& T, Eigen::Index i, double tnorm) {
  const cplx lambda = T(i, i);
  const double ulp = std::numeric_limits<double>::epsilon();
  const double smin =
      std::max({ulp * std::abs(lambda), ulp * tnorm, 1e-290});
  Vec v = Vec::Zero(T.rows());
  v(i) = cplx(1.0, 0.0);
  for (Eigen::Index j = i - 1; j >= 0; --j) {
    cplx s = T.row(j).segment(j + 1, i - j) * v.segment(j + 1, i - j);
    cplx d = T(j, j) - lambda;
    if (std::abs(d) < smin) d = smin;
    v(j) = -s / d;
    if (std::abs(v(j)) > 1e200) v.head(i + 1) *= 1e-200;
  }
  return v;
}

/// Left eigenvector of T at index i: solves x^* T = lambda x^* by forward
/// substitution with x(i) = 1.
inline Vec tri_left_vec(const Mat& T, Eigen::Index i, double tnorm) {
  const cplx lambda = T(i, i);
  const Eigen::Index n = T.rows();
  const double ulp = std::numeric_limits<double>::epsilon();
  const double smin =
      std::max({ulp * std::abs(lambda), ulp * tnorm, 1e-290});
  Vec x = Vec::Zero(n);
  x(i) = cplx(1.0, 0.0);
  for (Eigen::Index j = i + 1; j < n; ++j) {
    cplx s = (x.segment(i, j - i).adjoint() * T.block(i, j, j - i, 1))(0);
    cplx d = T(j, j) - lambda;
    if (std::abs(d) < smin) d = smin;
    x(j) = -std::conj(s / d);
    if (std::abs(x(j)) > 1e200) x.segment(i, j - i + 1) *= 1e-200;
  }
  return x;
}

/// Fix the relative phase of a left/right pair so x^* y is real >= 0,
/// record the pairing product, and flag near-orthogonal pairs.
inline void finalize_pair(EigenTriplet& t) {
  const cplx c = t.left.dot(t.right);  // x^* y
  const double a = std::abs(c);
  t.condition = a;
  t.ill_conditioned = a < kConditionFloor;
  if (a > 0.0) t.left *= c / a;
}

/// In-place conversion of a real quasi-triangular Schur pair (T, Q) to a
/// complex triangular one.  Each standardized 2x2 block is rotated by the
/// unitary similarity built from a unit eigenvector of the block.
inline void complexify_schur(Mat& T, Mat& Q) {
  const Eigen::Index n = T.rows();
  for (Eigen::Index k = 0; k + 1 < n; ++k) {
    if (T(k + 1, k) == cplx(0.0, 0.0)) continue;
    const cplx a = T(k, k), b = T(k, k + 1);
    const cplx c = T(k + 1, k), d = T(k + 1, k + 1);
    const cplx half = 0.5 * (a - d);
    const cplx mu = 0.5 * (a + d) + std::sqrt(half * half + b * c);
    // Unit eigenvector of [[a, b], [c, d]] for mu; take the better
    // conditioned of the two analytic forms.
    cplx v0 = b, v1 = mu - a;
    const cplx w0 = mu - d, w1 = c;
    if (std::norm(w0) + std::norm(w1) > std::norm(v0) + std::norm(v1)) {
      v0 = w0;
      v1 = w1;
    }
    const double nv = std::sqrt(std::norm(v0) + std::norm(v1));
    v0 /= nv;
    v1 /= nv;
    Eigen::Matrix2cd G;
    G << v0, -std::conj(v1), v1, std::conj(v0);
    T.middleRows(k, 2) = G.adjoint() * T.middleRows(k, 2);
    T.middleCols(k, 2) = T.middleCols(k, 2) * G;
    Q.middleCols(k, 2) = Q.middleCols(k, 2) * G;
    T(k + 1, k) = cplx(0.0, 0.0);  // exact zero by construction
    ++k;
  }
}

/// Shared tail of the non-normal paths: extract selected eigenvectors from
/// a complex Schur form A = Q T Q^*.
inline Spectrum from_schur(const Mat& T, const Mat& Q, double vectors_above) {
  const Eigen::Index n = T.rows();
  const double tnorm = T.cwiseAbs().maxCoeff();
  std::vector<Eigen::Index> order(n);
  for (Eigen::Index i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](Eigen::Index p, Eigen::Index q) {
    const cplx lp = T(p, p), lq = T(q, q);
    if (lp.real() != lq.real()) return lp.real() > lq.real();
    return lp.imag() > lq.imag();
  });

  Spectrum spec;
  spec.n = n;
  spec.triplets.resize(n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const Eigen::Index i = order[s];
    EigenTriplet& t = spec.triplets[s];
    t.lambda = T(i, i);
    if (t.lambda.real() <= vectors_above) continue;
    const Vec vt = tri_right_vec(T, i, tnorm);
    t.right = Q.leftCols(i + 1) * vt.head(i + 1);
    t.right.normalize();
    const Vec xt = tri_left_vec(T, i, tnorm);
    t.left = Q.rightCols(n - i) * xt.tail(n - i);
    t.left.normalize();
    finalize_pair(t);
  }
  return spec;
}

/// Real symmetric path: LAPACK syevr, full eigenvalue list plus
/// eigenvectors for the trailing block above the threshold.
inline Spectrum real_symmetric_spectrum(const Mat& A, double vectors_above) {
  const lapack_int n = static_cast<lapack_int>(A.rows());
  RMat W = A.real();
  std::vector<double> vals(n);
  std::vector<lapack_int> isuppz(2 * static_cast<size_t>(n) + 2);
  lapack_int m = 0;
  lapack_int info =
      LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'N', 'A', 'L', n, W.data(), n, 0.0,
                     0.0, 0, 0, 0.0, &m, vals.data(), nullptr, n,
                     isuppz.data());
  if (info != 0) throw SolverError("symmetric eigenvalue solve failed");

  lapack_int want = 0;  // eigenvalues strictly above the threshold
  while (want < n && vals[n - 1 - want] > vectors_above) ++want;

  RMat Z;
  if (want > 0) {
    W = A.real();
    Z.resize(n, want);
    std::vector<double> vals_sel(n);
    lapack_int mv = 0;
    info = LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'I', 'L', n, W.data(), n,
                          0.0, 0.0, n - want + 1, n, 0.0, &mv,
                          vals_sel.data(), Z.data(), n, isuppz.data());
    if (info != 0 || mv != want)
      throw SolverError("symmetric eigenvector solve failed");
  }

  Spectrum spec;
  spec.n = n;
  spec.triplets.resize(n);
  for (lapack_int s = 0; s < n; ++s) {
    EigenTriplet& t = spec.triplets[s];
    t.lambda = cplx(vals[n - 1 - s], 0.0);  // descending order
    if (s < want) {
      t.right = Z.col(want - 1 - s).cast<cplx>();
      t.left = t.right;
      t.condition = 1.0;
    }
  }
  return spec;
}

/// Complex Hermitian path (desk scale): dense self-adjoint solve.
inline Spectrum hermitian_spectrum(const Mat& A, double vectors_above) {
  Eigen::SelfAdjointEigenSolver<Mat> es(A);
  if (es.info() != Eigen::Success)
    throw SolverError("hermitian eigenvalue solve failed");
  const Eigen::Index n = A.rows();
  Spectrum spec;
  spec.n = n;
  spec.triplets.resize(n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const Eigen::Index i = n - 1 - s;  // ascending -> descending
    EigenTriplet& t = spec.triplets[s];
    t.lambda = cplx(es.eigenvalues()(i), 0.0);
    if (t.lambda.real() > vectors_above) {
      t.right = es.eigenvectors().col(i);
      t.left = t.right;
      t.condition = 1.0;
    }
  }
  return spec;
}

/// Sort eigenvalues (descending real part, then descending imaginary part)
/// into a vector-free Spectrum.
inline Spectrum values_only_spectrum(std::vector<cplx> vals) {
  std::sort(vals.begin(), vals.end(), [](cplx a, cplx b) {
    if (a.real() != b.real()) return a.real() > b.real();
    return a.imag() > b.imag();
  });
  Spectrum spec;
  spec.n = (Eigen::Index)vals.size();
  spec.triplets.resize(vals.size());
  for (size_t i = 0; i < vals.size(); ++i) spec.triplets[i].lambda = vals[i];
  return spec;
}

/// Eigenvalues of a real quasi-triangular Schur factor, 2x2 blocks
/// resolved analytically.
inline std::vector<cplx> quasi_triangular_eigenvalues(const RMat& T) {
  const Eigen::Index n = T.rows();
  std::vector<cplx> vals;
  vals.reserve(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    if (k + 1 < n && T(k + 1, k) != 0.0) {
      const double p = 0.5 * (T(k, k) + T(k + 1, k + 1));
      const double off = 0.5 * (T(k, k) - T(k + 1, k + 1));
      const double q = off * off + T(k, k + 1) * T(k + 1, k);
      if (q < 0.0) {
        const double w = std::sqrt(-q);
        vals.emplace_back(p, w);
        vals.emplace_back(p, -w);
      } else {
        const double w = std::sqrt(q);
        vals.emplace_back(p + w, 0.0);
        vals.emplace_back(p - w, 0.0);
      }
      ++k;
    } else {
      vals.emplace_back(T(k, k), 0.0);
    }
  }
  return vals;
}

}  // namespace detail

/// Eigenvalues of a square matrix together with unit left/right
/// eigenvector pairs, sorted by descending real part.
///
/// `vectors_above` limits eigenvector extraction to eigenvalues with
/// Re(lambda) > vectors_above; the default computes every pair.  Eigenvalue
/// entries are always complete.  Hermitian inputs take a symmetric solver
/// (left = right, condition = 1); everything else goes through one Schur
/// factorization followed by triangular substitution per selected
/// eigenvalue, so asking for few vectors is much cheaper than asking for
/// all of them at large n.
inline Spectrum eig_triplets(
    const Mat& A,
    double vectors_above = -std::numeric_limits<double>::infinity()) {
  if (!is_square(A)) throw DimensionError("eig_triplets: matrix not square");
  if (A.rows() == 0) throw DimensionError("eig_triplets: empty matrix");
  const bool want_vectors =
      vectors_above < std::numeric_limits<double>::infinity();

  if (is_hermitian(A)) {
    const Mat H = 0.5 * (A + A.adjoint());  // scrub roundoff asymmetry
    if (is_real(H)) return detail::real_symmetric_spectrum(H, vectors_above);
    return detail::hermitian_spectrum(H, vectors_above);
  }

  if (is_real(A)) {
    Eigen::RealSchur<RMat> schur(A.real(), want_vectors);
    if (schur.info() != Eigen::Success)
      throw SolverError("real Schur factorization failed");
    if (!want_vectors)
      return detail::values_only_spectrum(
          detail::quasi_triangular_eigenvalues(schur.matrixT()));
    Mat T = schur.matrixT().cast<cplx>();
    Mat Q = schur.matrixU().cast<cplx>();
    detail::complexify_schur(T, Q);
    return detail::from_schur(T, Q, vectors_above);
  }

  Eigen::ComplexSchur<Mat> schur(A, want_vectors);
  if (schur.info() != Eigen::Success)
    throw SolverError("complex Schur factorization failed");
  if (!want_vectors) {
    std::vector<cplx> vals(A.rows());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
      vals[i] = schur.matrixT()(i, i);
    return detail::values_only_spectrum(std::move(vals));
  }
  return detail::from_schur(schur.matrixT(), schur.matrixU(), vectors_above);
}

}  // namespace nstab
