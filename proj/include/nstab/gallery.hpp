#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>

#include "nstab/matrix_market.hpp"
#include "nstab/types.hpp"

namespace nstab {

/// Gaussian sampler with a pinned algorithm (Box-Muller over the top 53
/// bits of mt19937_64 draws).  std::normal_distribution is implementation
/// defined, which would make seeded gallery matrices differ between
/// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  /// Uniform draw in [0, 1).
  double uniform() { return (gen_() >> 11) * 0x1.0p-53; }

  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Column-major fill of a real standard-normal matrix.
  RMat gaussian_matrix(Eigen::Index rows, Eigen::Index cols) {
    RMat M(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) M(i, j) = gaussian();
    return M;
  }

  /// Column-major fill, real part then imaginary part per entry.
  Mat complex_gaussian_matrix(Eigen::Index rows, Eigen::Index cols) {
    Mat M(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) {
        const double re = gaussian();
        const double im = gaussian();
        M(i, j) = cplx(re, im);
      }
    return M;
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

enum class Provenance { builtin, generated, file };

/// A named test matrix, optionally carrying the sparsity mask that
/// structured runs should use by default.
struct GalleryEntry {
  std::string name;
  Mat A;
  std::optional<Mask> default_structure;
  Provenance provenance = Provenance::builtin;
};

/// Mask of exactly nonzero entries.
inline Mask nonzero_pattern(const Mat& A) {
  return A.cwiseAbs().array() > 0.0;
}

/// 10x10 integer test matrix with six unstable eigenvalues and trace -1.
inline GalleryEntry illustrative() {
  Mat A(10, 10);
  A.setZero();
  const int rows[10][10] = {
      {0, 1, 1, 1, -1, 0, -1, 0, 0, 0},   {1, -1, 0, 1, 1, 0, 1, 0, 0, 0},
      {-1, 0, -1, -1, -1, 1, 1, 1, 0, 0}, {1, 0, 0, -1, 1, -1, -1, 1, 0, 0},
      {0, 0, -1, 1, 0, 1, 1, -1, 0, 0},   {0, -1, 1, 1, -1, 0, 0, 1, 1, 0},
      {-1, 1, -1, 1, 1, 0, -1, 0, 1, 1},  {0, 0, 1, -1, -1, 1, 1, 1, -1, 1},
      {0, 0, 0, 0, 0, 0, 0, -1, 1, -1},   {0, 0, 0, 0, 0, 0, 0, 0, -1, 1}};
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) A(i, j) = cplx(rows[i][j], 0.0);
  return {"illustrative", A, std::nullopt, Provenance::builtin};
}

/// Grcar matrix: -1 on the subdiagonal, 1 on the diagonal and the first
/// three superdiagonals.  Its eigenvalues are sensitive to perturbation.
inline GalleryEntry grcar(int n) {
  if (n < 5) throw ArgumentError("grcar: n must be at least 5");
  Mat A = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    if (i > 0) A(i, i - 1) = -1.0;
    for (int j = i; j <= std::min(n - 1, i + 3); ++j) A(i, j) = 1.0;
  }
  return {"grcar", A, std::nullopt, Provenance::builtin};
}

/// Smoke matrix: diag(exp(2*pi*i*j/n)), ones on the superdiagonal and in
/// the bottom-left corner.  Every eigenvalue has modulus 2^(1/n).
inline GalleryEntry smoke(int n) {
  if (n < 2) throw ArgumentError("smoke: n must be at least 2");
  Mat A = Mat::Zero(n, n);
  for (int j = 1; j <= n; ++j) {
    const double t = 2.0 * std::numbers::pi * j / n;
    A(j - 1, j - 1) = cplx(std::cos(t), std::sin(t));
    if (j < n) A(j - 1, j) = 1.0;
  }
  A(n - 1, 0) = 1.0;
  return {"smoke", A, std::nullopt, Provenance::builtin};
}

/// Unitary conjugation of the smoke matrix by the Q factor of a seeded
/// complex Gaussian: same eigenvalues, dense and non-normal.
inline GalleryEntry smoke_like(int n, std::uint64_t seed) {
  Rng rng(seed);
  const Mat G = rng.complex_gaussian_matrix(n, n);
  Eigen::HouseholderQR<Mat> qr(G);
  const Mat Q = qr.householderQ() * Mat::Identity(n, n);
  Mat A = Q * smoke(n).A * Q.adjoint();
  return {"smoke_like", A, std::nullopt, Provenance::generated};
}

/// Symmetric pentadiagonal Toeplitz matrix: -1/2 on the diagonal, ones on
/// the first and second sub- and superdiagonals.
inline GalleryEntry pentadiagonal_toeplitz(int n) {
  if (n < 3) throw ArgumentError("pentadiagonal_toeplitz: n must be >= 3");
  Mat A = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    A(i, i) = -0.5;
    for (int d = 1; d <= 2; ++d) {
      if (i + d < n) {
        A(i, i + d) = 1.0;
        A(i + d, i) = 1.0;
      }
    }
  }
  GalleryEntry e{"pentadiagonal_toeplitz", A, std::nullopt,
                 Provenance::builtin};
  e.default_structure = nonzero_pattern(A);
  return e;
}

/// Jacobian of the 2-D reaction-diffusion Brusselator on an l-by-l interior
/// grid (n = 2*l^2), linearized at the trivial steady state.  Five-point
/// Laplacians with h = 1/(l+1), D1 = 0.008, D2 = 0.004, feed A = 2,
/// B = 5.45.  With l = 20 the nonzero count is 4640 and the spectrum has
/// exactly one unstable conjugate pair close to the imaginary axis.
inline GalleryEntry brusselator(int l) {
  if (l < 2) throw ArgumentError("brusselator: grid size must be >= 2");
  const int m = l * l;
  const double h = 1.0 / (l + 1);
  const double d1 = 0.008 / (h * h);
  const double d2 = 0.004 / (h * h);
  const double feed_a = 2.0, feed_b = 5.45;

  Mat A = Mat::Zero(2 * m, 2 * m);
  auto idx = [l](int i, int j) { return i + j * l; };
  for (int j = 0; j < l; ++j)
    for (int i = 0; i < l; ++i) {
      const int k = idx(i, j);
      auto stencil = [&](int block, double scale, double react) {
        const int o = block * m;
        A(o + k, o + k) = -4.0 * scale + react;
        if (i > 0) A(o + k, o + idx(i - 1, j)) = scale;
        if (i + 1 < l) A(o + k, o + idx(i + 1, j)) = scale;
        if (j > 0) A(o + k, o + idx(i, j - 1)) = scale;
        if (j + 1 < l) A(o + k, o + idx(i, j + 1)) = scale;
      };
      stencil(0, d1, feed_b - 1.0);
      stencil(1, d2, -feed_a * feed_a);
      A(k, m + k) = feed_a * feed_a;
      A(m + k, k) = -feed_b;
    }
  GalleryEntry e{"brusselator", A, std::nullopt, Provenance::generated};
  e.default_structure = nonzero_pattern(A);
  return e;
}

/// A - sigma*I.
inline Mat shift(const Mat& A, double sigma) {
  if (!is_square(A)) throw DimensionError("shift: matrix not square");
  return A - sigma * Mat::Identity(A.rows(), A.cols());
}

/// Load a Matrix Market file as a gallery entry; the default structure is
/// the mask of stored entries.
inline GalleryEntry from_matrix_market(const std::string& path) {
  MatrixMarketFile f = read_matrix_market(path);
  GalleryEntry e{path, f.A, f.stored, Provenance::file};
  return e;
}

}  // namespace nstab
