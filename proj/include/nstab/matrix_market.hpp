#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "nstab/types.hpp"

namespace nstab {

/// Parsed Matrix Market file: the (dense-assembled) matrix plus the mask of
/// stored positions (symmetrized for symmetric files).
struct MatrixMarketFile {
  Mat A;
  Mask stored;
  bool symmetric = false;
  long entries = 0;  ///< stored entry count as declared in the file
};

namespace detail {

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace detail

/// Read a Matrix Market file (coordinate or array; real, integer or
/// complex; general or symmetric).  Indices are 1-based in the file;
/// malformed headers, bad counts and out-of-range indices raise ParseError
/// with the offending line number.
inline MatrixMarketFile read_matrix_market(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SolverError("cannot open '" + path + "'");

  long lineno = 0;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file", 1);
  ++lineno;

  std::istringstream hdr(line);
  std::string banner, object, format, field, symmetry;
  hdr >> banner >> object >> format >> field >> symmetry;
  if (detail::lower(banner) != "%%matrixmarket" ||
      detail::lower(object) != "matrix")
    throw ParseError("not a Matrix Market matrix header", lineno);
  format = detail::lower(format);
  field = detail::lower(field);
  symmetry = detail::lower(symmetry);
  if (format != "coordinate" && format != "array")
    throw ParseError("unsupported format '" + format + "'", lineno);
  if (field != "real" && field != "integer" && field != "complex")
    throw ParseError("unsupported field '" + field + "'", lineno);
  if (symmetry != "general" && symmetry != "symmetric")
    throw ParseError("unsupported symmetry '" + symmetry + "'", lineno);
  const bool coordinate = format == "coordinate";
  const bool complex_field = field == "complex";
  const bool symmetric = symmetry == "symmetric";

  auto next_data_line = [&](std::istringstream& out) -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '%') continue;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      out.clear();
      out.str(line);
      return true;
    }
    ++lineno;
    return false;
  };

  std::istringstream ls;
  if (!next_data_line(ls)) throw ParseError("missing size line", lineno);
  long rows = 0, cols = 0, declared = 0;
  if (coordinate) {
    if (!(ls >> rows >> cols >> declared))
      throw ParseError("bad coordinate size line", lineno);
  } else {
    if (!(ls >> rows >> cols)) throw ParseError("bad array size line", lineno);
    declared = symmetric ? rows * (rows + 1) / 2 : rows * cols;
  }
  if (rows <= 0 || cols <= 0 || declared < 0)
    throw ParseError("non-positive matrix dimensions", lineno);
  if (symmetric && rows != cols)
    throw ParseError("symmetric file must be square", lineno);

  MatrixMarketFile out;
  out.A = Mat::Zero(rows, cols);
  out.stored = Mask::Constant(rows, cols, false);
  out.symmetric = symmetric;
  out.entries = declared;

  auto read_value = [&](std::istringstream& s) -> cplx {
    double re = 0.0, im = 0.0;
    if (!(s >> re)) throw ParseError("bad numeric value", lineno);
    if (complex_field && !(s >> im))
      throw ParseError("bad complex value", lineno);
    return {re, im};
  };

  if (coordinate) {
    for (long k = 0; k < declared; ++k) {
      if (!next_data_line(ls))
        throw ParseError("fewer entries than declared", lineno);
      long i = 0, j = 0;
      if (!(ls >> i >> j)) throw ParseError("bad coordinate entry", lineno);
      if (i < 1 || i > rows || j < 1 || j > cols)
        throw ParseError("index out of range", lineno);
      const cplx v = read_value(ls);
      out.A(i - 1, j - 1) = v;
      out.stored(i - 1, j - 1) = true;
      if (symmetric) {
        out.A(j - 1, i - 1) = v;
        out.stored(j - 1, i - 1) = true;
      }
    }
  } else {
    // Array data is listed column-major; symmetric files store the lower
    // triangle of each column.
    long i = symmetric ? 0 : 0, j = 0, base = 0;
    for (long k = 0; k < declared; ++k) {
      if (!next_data_line(ls))
        throw ParseError("fewer entries than declared", lineno);
      const cplx v = read_value(ls);
      out.A(base + i, j) = v;
      out.stored(base + i, j) = true;
      if (symmetric) {
        out.A(j, base + i) = v;
        out.stored(j, base + i) = true;
      }
      ++i;
      const long col_len = symmetric ? rows - j : rows;
      if (i == col_len) {
        i = 0;
        ++j;
        base = symmetric ? j : 0;
      }
    }
  }
  if (next_data_line(ls))
    throw ParseError("more entries than declared", lineno);
  return out;
}

/// Write a matrix in coordinate Matrix Market format (real when every
/// imaginary part is zero, complex otherwise).  Values are printed with 17
/// significant digits so a read-back reproduces them bit for bit.
inline void write_matrix_market(const std::string& path, const Mat& A,
                                const std::string& comment = "") {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw SolverError("cannot write '" + path + "'");
  const bool complex_field = !is_real(A, 0.0);
  long nnz = 0;
  for (Eigen::Index j = 0; j < A.cols(); ++j)
    for (Eigen::Index i = 0; i < A.rows(); ++i)
      if (A(i, j) != cplx(0.0, 0.0)) ++nnz;
  std::fprintf(f, "%%%%MatrixMarket matrix coordinate %s general\n",
               complex_field ? "complex" : "real");
  if (!comment.empty()) std::fprintf(f, "%% %s\n", comment.c_str());
  std::fprintf(f, "%ld %ld %ld\n", (long)A.rows(), (long)A.cols(), nnz);
  for (Eigen::Index j = 0; j < A.cols(); ++j)
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      const cplx v = A(i, j);
      if (v == cplx(0.0, 0.0)) continue;
      if (complex_field)
        std::fprintf(f, "%ld %ld %.17g %.17g\n", (long)i + 1, (long)j + 1,
                     v.real(), v.imag());
      else
        std::fprintf(f, "%ld %ld %.17g\n", (long)i + 1, (long)j + 1,
                     v.real());
    }
  std::fclose(f);
}

}  // namespace nstab
