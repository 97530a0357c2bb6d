#pragma once

// Exact rational linear algebra used by the oracle paths: Bareiss fraction-free
// elimination over cleared-denominator integers, plus small helpers. Entries
// are kept canonical (mpq_class normalizes on assignment).

#include <gmpxx.h>

#include <string>
#include <vector>

#include "bitopt/errors.hpp"
#include "bitopt/fixed.hpp"

namespace bitopt::rat {

using RatVector = std::vector<mpq_class>;

struct RatMatrix {
  int rows = 0, cols = 0;
  std::vector<mpq_class> a;

  RatMatrix() = default;
  RatMatrix(int r, int c) : rows(r), cols(c), a(size_t(r) * c) {}
  mpq_class& operator()(int i, int j) { return a[size_t(i) * cols + j]; }
  const mpq_class& operator()(int i, int j) const { return a[size_t(i) * cols + j]; }

  static RatMatrix identity(int n) {
    RatMatrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1;
    return m;
  }
};

inline RatVector matvec(const RatMatrix& m, const RatVector& v) {
  RatVector r(m.rows, mpq_class(0));
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) r[i] += m(i, j) * v[j];
  return r;
}

inline RatVector matvec_t(const RatMatrix& m, const RatVector& v) {
  RatVector r(m.cols, mpq_class(0));
  for (int j = 0; j < m.cols; ++j)
    for (int i = 0; i < m.rows; ++i) r[j] += m(i, j) * v[i];
  return r;
}

inline RatMatrix matmul(const RatMatrix& a, const RatMatrix& b) {
  RatMatrix r(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int k = 0; k < b.cols; ++k) {
      mpq_class s = 0;
      for (int j = 0; j < a.cols; ++j) s += a(i, j) * b(j, k);
      r(i, k) = s;
    }
  return r;
}

inline RatMatrix transpose(const RatMatrix& m) {
  RatMatrix r(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) r(j, i) = m(i, j);
  return r;
}

inline mpq_class dot(const RatVector& a, const RatVector& b) {
  mpq_class s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double to_double(const mpq_class& q) { return q.get_d(); }

// Solve M x = b exactly via fraction-free Gaussian elimination (Bareiss) on
// the cleared-denominator integer system. Throws SingularMatrixError with the
// pivot column where rank deficiency was detected.
inline RatVector exact_solve(const RatMatrix& M, const RatVector& b) {
  if (M.rows != M.cols) throw ParameterError("exact_solve: matrix must be square");
  const int n = M.rows;
  if (static_cast<int>(b.size()) != n) throw ParameterError("exact_solve: dimension mismatch");

  // Clear denominators row by row: row_scale[i] * (M|b)(i,:) is integral.
  std::vector<std::vector<mpz_class>> w(n, std::vector<mpz_class>(n + 1));
  for (int i = 0; i < n; ++i) {
    mpz_class l = 1;
    for (int j = 0; j < n; ++j) mpz_lcm(l.get_mpz_t(), l.get_mpz_t(), M(i, j).get_den().get_mpz_t());
    mpz_lcm(l.get_mpz_t(), l.get_mpz_t(), b[i].get_den().get_mpz_t());
    for (int j = 0; j < n; ++j) {
      mpq_class q = M(i, j) * l;
      w[i][j] = q.get_num();
    }
    mpq_class q = b[i] * l;
    w[i][n] = q.get_num();
  }

  mpz_class prev = 1;
  for (int k = 0; k < n - 1; ++k) {
    // Partial pivot: any nonzero entry in column k.
    int piv = -1;
    for (int i = k; i < n; ++i)
      if (w[i][k] != 0) {
        piv = i;
        break;
      }
    if (piv < 0) throw SingularMatrixError("exact_solve: rank deficiency in column " + std::to_string(k), k);
    if (piv != k) std::swap(w[piv], w[k]);
    for (int i = k + 1; i < n; ++i) {
      for (int j = k + 1; j <= n; ++j) {
        mpz_class t = w[i][j] * w[k][k] - w[i][k] * w[k][j];
        mpz_divexact(w[i][j].get_mpz_t(), t.get_mpz_t(), prev.get_mpz_t());
      }
      w[i][k] = 0;
    }
    prev = w[k][k];
  }
  if (w[n - 1][n - 1] == 0)
    throw SingularMatrixError("exact_solve: rank deficiency in column " + std::to_string(n - 1), n - 1);

  // Back substitution over rationals; w is upper triangular with the Bareiss
  // scaling, so divide through exactly.
  RatVector x(n);
  for (int i = n - 1; i >= 0; --i) {
    mpq_class s(w[i][n]);
    for (int j = i + 1; j < n; ++j) s -= mpq_class(w[i][j]) * x[j];
    x[i] = s / mpq_class(w[i][i]);
    x[i].canonicalize();
  }
  return x;
}

// Exact inverse via column solves; oracle-only helper.
inline RatMatrix exact_inverse(const RatMatrix& M) {
  const int n = M.rows;
  RatMatrix inv(n, n);
  for (int j = 0; j < n; ++j) {
    RatVector e(n, mpq_class(0));
    e[j] = 1;
    RatVector col = exact_solve(M, e);
    for (int i = 0; i < n; ++i) inv(i, j) = col[i];
  }
  return inv;
}

inline mpq_class frob_norm_sq(const RatMatrix& m) {
  mpq_class s = 0;
  for (const auto& v : m.a) s += v * v;
  return s;
}

// Serialization: rationals travel as "p/q" strings ("p" when q == 1).
inline std::string to_string(const mpq_class& q) {
  if (q.get_den() == 1) return q.get_num().get_str();
  return q.get_num().get_str() + "/" + q.get_den().get_str();
}

inline mpq_class from_string(const std::string& s) {
  mpq_class q;
  if (q.set_str(s, 10) != 0) throw InputError("bad rational literal: " + s);
  q.canonicalize();
  return q;
}

template <class B>
RatVector from_fx(const fx::Vec<B>& v) {
  RatVector r(v.size());
  for (size_t i = 0; i < v.size(); ++i) r[i] = fx::raw_to_mpq<B>(v[i], v.ctx);
  return r;
}

template <class B>
RatMatrix from_fx(const fx::Mat<B>& m) {
  RatMatrix r(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) r(i, j) = fx::raw_to_mpq<B>(m(i, j), m.ctx);
  return r;
}

template <class B>
fx::Vec<B> to_fx(const RatVector& v, const PrecisionContext& c) {
  fx::Vec<B> r(v.size(), c);
  for (size_t i = 0; i < v.size(); ++i) r[i] = fx::raw_from_mpq<B>(v[i], c);
  return r;
}

template <class B>
fx::Mat<B> to_fx(const RatMatrix& m, const PrecisionContext& c) {
  fx::Mat<B> r(m.rows, m.cols, c);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) r(i, j) = fx::raw_from_mpq<B>(m(i, j), c);
  return r;
}

}  // namespace bitopt::rat
