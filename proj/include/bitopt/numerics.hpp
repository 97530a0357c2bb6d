#pragma once

// Rounding primitives and norm/condition utilities on top of the fixed-point
// and rational layers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "bitopt/errors.hpp"
#include "bitopt/fixed.hpp"
#include "bitopt/rational.hpp"
#include "bitopt/rng.hpp"

namespace bitopt::num {

// Smallest k with 2^-k <= eps_target.
inline int grid_bits_for(double eps_target) {
  if (!(eps_target > 0)) throw ParameterError("eps_target must be positive");
  int e;
  std::frexp(eps_target, &e);  // eps in [2^(e-1), 2^e)
  return 1 - e;
}

// round_fx: round exact rationals onto the 2^-k grid, k = ceil(log2(1/eps)).
// Componentwise |out - x| <= eps_target/2; idempotent by construction.
template <class B = fx::Narrow>
fx::Vec<B> round_fx(const rat::RatVector& x, double eps_target, const PrecisionContext& ctx) {
  if (eps_target < ctx.eps())
    throw ParameterError("round_fx: eps_target below the context grain");
  int k = std::min(grid_bits_for(eps_target), ctx.frac_bits);
  PrecisionContext grid{k, ctx.max_magnitude_bits};
  fx::Vec<B> out(x.size(), ctx);
  for (size_t i = 0; i < x.size(); ++i) {
    typename B::Raw coarse;
    try {
      coarse = fx::raw_from_mpq<B>(x[i], grid);
    } catch (const OverflowError&) {
      throw OverflowError("round_fx: integer part overflow at index " + std::to_string(i),
                          static_cast<long>(i));
    }
    // Re-express on the context scale (exact left shift).
    mpz_class raw = B::to_mpz_raw(coarse) << (ctx.frac_bits - k);
    out[i] = B::from_mpz_scaled(raw);
  }
  return out;
}

// Re-round an existing fixed-point vector onto a coarser grid.
template <class B>
fx::Vec<B> round_fx(const fx::Vec<B>& x, double eps_target) {
  if (eps_target < x.ctx.eps())
    throw ParameterError("round_fx: eps_target below the context grain");
  int k = std::min(grid_bits_for(eps_target), x.ctx.frac_bits);
  fx::Vec<B> out(x.size(), x.ctx);
  for (size_t i = 0; i < x.size(); ++i) out[i] = B::round_to_grid(x[i], k, x.ctx);
  return out;
}

// qround: snap each entry to sign(x_i) * q^{k_i}, k_i minimizing the absolute
// distance; ties pick the smaller exponent. Exponents are returned so callers
// can clear denominators exactly.
struct QRounded {
  rat::RatVector value;
  std::vector<long> exponent;
};

inline mpq_class pow_q(const mpq_class& q, long k) {
  mpz_class num = q.get_num(), den = q.get_den();
  unsigned long a = static_cast<unsigned long>(k < 0 ? -k : k);
  mpz_class pn, pd;
  mpz_pow_ui(pn.get_mpz_t(), num.get_mpz_t(), a);
  mpz_pow_ui(pd.get_mpz_t(), den.get_mpz_t(), a);
  mpq_class r = k < 0 ? mpq_class(pd, pn) : mpq_class(pn, pd);
  r.canonicalize();
  return r;
}

inline QRounded qround_vec(const rat::RatVector& x, const mpq_class& q) {
  if (q <= 1) throw ParameterError("qround: q must exceed 1");
  const double lq = std::log(q.get_d());
  QRounded out;
  out.value.resize(x.size());
  out.exponent.resize(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    if (x[i] == 0) throw DomainError("qround: zero entry at index " + std::to_string(i));
    mpq_class ax = abs(x[i]);
    long k0 = std::lround(std::log(ax.get_d()) / lq);
    long best_k = k0;
    mpq_class best_pow = pow_q(q, k0);
    mpq_class best_err = abs(best_pow - ax);
    // The log estimate is within one step of the argmin; scan neighbours and
    // settle ties toward the smaller exponent.
    for (long dk : {-1L, 1L, -2L, 2L}) {
      long k = k0 + dk;
      mpq_class p = pow_q(q, k);
      mpq_class err = abs(p - ax);
      if (err < best_err || (err == best_err && k < best_k)) {
        best_err = err;
        best_k = k;
        best_pow = p;
      }
    }
    out.exponent[i] = best_k;
    out.value[i] = x[i] < 0 ? mpq_class(-best_pow) : best_pow;
  }
  return out;
}

template <class B>
QRounded qround_vec(const fx::Vec<B>& x, const mpq_class& q) {
  return qround_vec(rat::from_fx(x), q);
}

// --- norms and condition estimation -----------------------------------------

template <class B>
double frob_norm(const fx::Mat<B>& m) {
  long double s = 0;
  for (const auto& v : m.a) {
    long double d = B::to_double(v, m.ctx);
    s += d * d;
  }
  return std::sqrt(static_cast<double>(s));
}

inline double frob_norm(const rat::RatMatrix& m) {
  long double s = 0;
  for (const auto& v : m.a) {
    long double d = v.get_d();
    s += d * d;
  }
  return std::sqrt(static_cast<double>(s));
}

// Small dense long-double matrix for estimation plumbing.
struct LMat {
  int rows = 0, cols = 0;
  std::vector<long double> a;
  LMat() = default;
  LMat(int r, int c) : rows(r), cols(c), a(size_t(r) * c, 0.0L) {}
  long double& operator()(int i, int j) { return a[size_t(i) * cols + j]; }
  long double operator()(int i, int j) const { return a[size_t(i) * cols + j]; }
};

template <class B>
LMat to_lmat(const fx::Mat<B>& m) {
  LMat r(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) r(i, j) = B::to_double(m(i, j), m.ctx);
  return r;
}

inline LMat to_lmat(const rat::RatMatrix& m) {
  LMat r(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) r(i, j) = m(i, j).get_d();
  return r;
}

inline LMat gram(const LMat& a) {
  LMat g(a.cols, a.cols);
  for (int j = 0; j < a.cols; ++j)
    for (int k = j; k < a.cols; ++k) {
      long double s = 0;
      for (int i = 0; i < a.rows; ++i) s += a(i, j) * a(i, k);
      g(j, k) = g(k, j) = s;
    }
  return g;
}

inline constexpr int kPowerIters = 200;
inline constexpr double kPowerTol = 1e-8;

// Largest eigenvalue of a symmetric PSD matrix by power iteration with the
// fixed budget/threshold (estimates feed bit-budget selection only).
inline long double power_iteration(const LMat& s, std::uint64_t seed = 12345) {
  const int n = s.rows;
  if (n == 0) throw DomainError("power iteration on empty matrix");
  CounterRng rng(seed);
  std::vector<long double> v(n);
  for (auto& e : v) e = rng.next_normal();
  long double lam = 0;
  for (int it = 0; it < kPowerIters; ++it) {
    std::vector<long double> w(n, 0.0L);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) w[i] += s(i, j) * v[j];
    long double nw = 0;
    for (auto e : w) nw += e * e;
    nw = std::sqrt(nw);
    if (nw == 0) return 0;
    long double nl = 0;
    for (int i = 0; i < n; ++i) {
      v[i] = w[i] / nw;
      nl += v[i] * w[i];
    }
    if (it > 0 && std::fabs(static_cast<double>(nl - lam)) <= kPowerTol * std::fabs(static_cast<double>(nl))) {
      lam = nl;
      break;
    }
    lam = nl;
  }
  return lam;
}

inline bool is_zero(const LMat& m) {
  for (auto v : m.a)
    if (v != 0) return false;
  return true;
}

// Spectral-norm estimate within a factor of 2 (power iteration on A^T A).
template <class M>
double two_norm_est(const M& a) {
  LMat l = to_lmat(a);
  if (is_zero(l)) throw DomainError("two_norm_est: zero matrix");
  return std::sqrt(static_cast<double>(power_iteration(gram(l))));
}

inline double two_norm_est(const LMat& l) {
  if (is_zero(l)) throw DomainError("two_norm_est: zero matrix");
  return std::sqrt(static_cast<double>(power_iteration(gram(l))));
}

// Smallest-singular-value estimate: inverse power iteration through one exact
// rational inverse of A^T A. Returns 0 for rank-deficient input.
inline double sigma_min_est(const rat::RatMatrix& a) {
  rat::RatMatrix g = rat::matmul(rat::transpose(a), a);
  rat::RatMatrix ginv;
  try {
    ginv = rat::exact_inverse(g);
  } catch (const SingularMatrixError&) {
    return 0.0;
  }
  long double lam = power_iteration(to_lmat(ginv));
  if (lam <= 0) return 0.0;
  return 1.0 / std::sqrt(static_cast<double>(lam));
}

template <class B>
double sigma_min_est(const fx::Mat<B>& a) {
  return sigma_min_est(rat::from_fx(a));
}

// kappa(A) within a factor of 4; +inf when rank-deficient.
template <class M>
double cond_estimate(const M& a) {
  double smax = two_norm_est(a);
  double smin = sigma_min_est(a);
  if (smin == 0.0) return std::numeric_limits<double>::infinity();
  return smax / smin;
}

// --- symmetric eigendecomposition (cyclic Jacobi) ----------------------------

struct EigenSym {
  std::vector<long double> values;  // ascending
  LMat vectors;                     // columns are eigenvectors
};

inline EigenSym jacobi_eigen(LMat s) {
  const int n = s.rows;
  LMat v(n, n);
  for (int i = 0; i < n; ++i) v(i, i) = 1.0L;
  for (int sweep = 0; sweep < 100; ++sweep) {
    long double off = 0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += s(p, q) * s(p, q);
    if (off < 1e-36L) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (s(p, q) == 0) continue;
        long double theta = (s(q, q) - s(p, p)) / (2 * s(p, q));
        long double t = (theta >= 0 ? 1.0L : -1.0L) /
                        (std::fabs((double)theta) + std::sqrt((double)(theta * theta + 1)));
        long double c = 1 / std::sqrt((double)(t * t + 1));
        long double sn = t * c;
        for (int k = 0; k < n; ++k) {
          long double skp = s(k, p), skq = s(k, q);
          s(k, p) = c * skp - sn * skq;
          s(k, q) = sn * skp + c * skq;
        }
        for (int k = 0; k < n; ++k) {
          long double spk = s(p, k), sqk = s(q, k);
          s(p, k) = c * spk - sn * sqk;
          s(q, k) = sn * spk + c * sqk;
        }
        for (int k = 0; k < n; ++k) {
          long double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
  }
  EigenSym e;
  e.values.resize(n);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::vector<long double> diag(n);
  for (int i = 0; i < n; ++i) diag[i] = s(i, i);
  std::sort(order.begin(), order.end(), [&](int a2, int b2) { return diag[a2] < diag[b2]; });
  e.vectors = LMat(n, n);
  for (int j = 0; j < n; ++j) {
    e.values[j] = diag[order[j]];
    for (int i = 0; i < n; ++i) e.vectors(i, j) = v(i, order[j]);
  }
  return e;
}

}  // namespace bitopt::num
