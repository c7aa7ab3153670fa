#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>

namespace nstab {

using cplx = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;
using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Base class for every failure the solver raises on purpose.
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Mismatched or invalid dimensions.
struct DimensionError : SolverError {
  using SolverError::SolverError;
};

/// A scalar or option outside its admissible domain.
struct ArgumentError : SolverError {
  using SolverError::SolverError;
};

/// An eigenvalue needed by a gradient is too ill conditioned to use.
struct IllConditionedError : SolverError {
  using SolverError::SolverError;
};

/// A low-rank step lost all of its singular mass.
struct DegenerateRankError : SolverError {
  using SolverError::SolverError;
};

/// A sub-ODE integration exceeded its substep budget; callers shrink the
/// outer step and retry.
struct StepBudgetError : SolverError {
  using SolverError::SolverError;
};

/// The requested perturbation budget cannot stabilize the matrix.
struct UnstabilizableError : SolverError {
  using SolverError::SolverError;
};

/// Matrix Market input could not be parsed; carries a 1-based line number.
struct ParseError : SolverError {
  long line;
  ParseError(const std::string& what, long line_no)
      : SolverError(what + " (line " + std::to_string(line_no) + ")"),
        line(line_no) {}
};

/// Real Frobenius inner product Re trace(X^* Y).
inline double real_inner(const Mat& X, const Mat& Y) {
  return X.cwiseProduct(Y.conjugate()).sum().real();
}

inline bool is_square(const Mat& A) { return A.rows() == A.cols(); }

/// True when M is Hermitian up to rel_tol * ||M||_F.
inline bool is_hermitian(const Mat& M, double rel_tol = 1e-13) {
  if (!is_square(M)) return false;
  return (M - M.adjoint()).norm() <= rel_tol * std::max(1e-300, M.norm());
}

/// True when every imaginary part vanishes up to rel_tol * ||M||_F.
inline bool is_real(const Mat& M, double rel_tol = 1e-14) {
  return M.imag().norm() <= rel_tol * std::max(1e-300, M.norm());
}

}  // namespace nstab
