#pragma once

// Fixed-point scalar layer. Values are two's-complement integers scaled by
// 2^frac_bits. Two backends share one interface: Narrow packs the raw integer
// into __int128 (frac_bits + max_magnitude_bits <= 126) and is the default for
// solver hot loops; Wide stores GMP integers and has no width limit, for the
// high-precision inverse-maintenance contexts. Rounding is round-to-nearest,
// ties to even, applied once per accumulated dot product.

#include <gmp.h>
#include <gmpxx.h>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bitopt/errors.hpp"

namespace bitopt {

struct PrecisionContext {
  int frac_bits = 64;
  int max_magnitude_bits = 63;

  double eps() const { return std::ldexp(1.0, -frac_bits); }
  int total_bits() const { return frac_bits + max_magnitude_bits; }
};

namespace fx {

using u64 = std::uint64_t;
using i128 = __int128;
using u128 = unsigned __int128;

namespace detail {

// 256-bit unsigned value as (hi, lo) halves.
struct U256 {
  u128 lo = 0;
  u128 hi = 0;
};

inline U256 mul_u128(u128 a, u128 b) {
  const u128 mask = (~u128(0)) >> 64;
  u128 a0 = a & mask, a1 = a >> 64;
  u128 b0 = b & mask, b1 = b >> 64;
  u128 p00 = a0 * b0;
  u128 p01 = a0 * b1;
  u128 p10 = a1 * b0;
  u128 p11 = a1 * b1;
  U256 r;
  u128 mid = (p00 >> 64) + (p01 & mask) + (p10 & mask);
  r.lo = (p00 & mask) | (mid << 64);
  r.hi = p11 + (p01 >> 64) + (p10 >> 64) + (mid >> 64);
  return r;
}

inline int bit_length_u128(u128 v) {
  if (v == 0) return 0;
  u64 hi = static_cast<u64>(v >> 64);
  if (hi != 0) return 128 - __builtin_clzll(hi);
  return 64 - __builtin_clzll(static_cast<u64>(v));
}

// Shift (hi,lo) right by k in [0, 255], rounding to nearest, ties to even.
// Returns false in *exact if any nonzero bits were dropped.
inline u128 shift_round_even(U256 v, int k, bool* inexact = nullptr) {
  if (k == 0) {
    if (inexact) *inexact = false;
    if (v.hi != 0) throw OverflowError("fixed-point shift: value exceeds 128 bits");
    return v.lo;
  }
  // Dropped part and the kept quotient.
  u128 q, rem_hi = 0, rem_lo;
  int dropped_bits = k;
  if (k < 128) {
    q = (v.lo >> k) | (k == 0 ? u128(0) : (v.hi << (128 - k)));
    if ((v.hi >> k) != 0) throw OverflowError("fixed-point shift: value exceeds 128 bits");
    rem_lo = v.lo & ((u128(1) << k) - 1);
  } else if (k == 128) {
    q = v.hi;
    rem_lo = v.lo;
    dropped_bits = 128;
  } else {
    int k2 = k - 128;
    if (k2 >= 128) {
      q = 0;
      rem_hi = v.hi;
      rem_lo = v.lo;
      dropped_bits = 256;
    } else {
      q = v.hi >> k2;
      rem_hi = v.hi & ((u128(1) << k2) - 1);
      rem_lo = v.lo;
      dropped_bits = k;
    }
  }
  if (inexact) *inexact = (rem_lo != 0 || rem_hi != 0);
  // Compare remainder against half = 2^(k-1).
  int cmp;  // -1 below half, 0 at half, +1 above half
  if (dropped_bits <= 128) {
    u128 half = u128(1) << (dropped_bits - 1);
    cmp = rem_lo < half ? -1 : (rem_lo == half && rem_hi == 0 ? 0 : 1);
  } else {
    u128 half_hi = u128(1) << (dropped_bits - 1 - 128);
    if (rem_hi < half_hi) cmp = -1;
    else if (rem_hi > half_hi) cmp = 1;
    else cmp = rem_lo == 0 ? 0 : 1;
  }
  if (cmp > 0 || (cmp == 0 && (q & 1))) {
    if (q == ~u128(0)) throw OverflowError("fixed-point rounding carry overflow");
    ++q;
  }
  return q;
}

inline void add_acc(U256& acc, U256 v) {
  u128 lo = acc.lo + v.lo;
  acc.hi += v.hi + (lo < acc.lo ? 1 : 0);
  acc.lo = lo;
}

inline U256 negate(U256 v) {
  U256 r;
  r.lo = ~v.lo + 1;
  r.hi = ~v.hi + (r.lo == 0 ? 1 : 0);
  return r;
}

}  // namespace detail

struct Narrow {
  using Raw = i128;
  static constexpr int kMaxTotalBits = 126;
  static const char* name() { return "narrow"; }

  static bool context_ok(const PrecisionContext& c) {
    return c.frac_bits >= 1 && c.max_magnitude_bits >= 1 && c.total_bits() <= kMaxTotalBits;
  }

  static bool fits(Raw v, const PrecisionContext& c) {
    u128 mag = v < 0 ? u128(-(v + 1)) + 1 : u128(v);
    return detail::bit_length_u128(mag) <= c.total_bits();
  }

  static void check(Raw v, const PrecisionContext& c, long index = -1) {
    if (!fits(v, c))
      throw OverflowError("fixed-point magnitude overflow at index " + std::to_string(index), index);
  }

  static Raw add(Raw a, Raw b) {
    Raw r = Raw(u128(a) + u128(b));
    if ((a >= 0) == (b >= 0) && (r >= 0) != (a >= 0))
      throw OverflowError("fixed-point add overflow");
    return r;
  }
  static Raw sub(Raw a, Raw b) {
    Raw r = Raw(u128(a) - u128(b));
    if ((a >= 0) != (b >= 0) && (r >= 0) != (a >= 0))
      throw OverflowError("fixed-point sub overflow");
    return r;
  }
  static Raw neg(Raw a) { return -a; }

  static Raw mul_round(Raw a, Raw b, const PrecisionContext& c) {
    bool negate = (a < 0) != (b < 0);
    u128 ua = a < 0 ? u128(-(a + 1)) + 1 : u128(a);
    u128 ub = b < 0 ? u128(-(b + 1)) + 1 : u128(b);
    u128 q = detail::shift_round_even(detail::mul_u128(ua, ub), c.frac_bits);
    if (detail::bit_length_u128(q) > c.total_bits())
      throw OverflowError("fixed-point multiply overflow");
    return negate ? -Raw(q) : Raw(q);
  }

  // Divide value(a) by value(b): raw result ~ (a << frac) / b, RNE.
  static Raw div_round(Raw a, Raw b, const PrecisionContext& c) {
    if (b == 0) throw DomainError("fixed-point division by zero");
    bool negate = (a < 0) != (b < 0);
    u128 ua = a < 0 ? u128(-(a + 1)) + 1 : u128(a);
    u128 ub = b < 0 ? u128(-(b + 1)) + 1 : u128(b);
    // Numerator = ua << frac_bits, up to 4 limbs.
    mp_limb_t np[5] = {0, 0, 0, 0, 0};
    int shift_limb = c.frac_bits / 64, shift_bit = c.frac_bits % 64;
    mp_limb_t base[3] = {static_cast<mp_limb_t>(ua), static_cast<mp_limb_t>(ua >> 64), 0};
    if (shift_bit == 0) {
      for (int i = 0; i < 2; ++i) np[i + shift_limb] = base[i];
    } else {
      mp_limb_t carry = 0;
      for (int i = 0; i < 3; ++i) {
        np[i + shift_limb] = (base[i] << shift_bit) | carry;
        carry = shift_bit ? base[i] >> (64 - shift_bit) : 0;
      }
    }
    int nn = 5;
    while (nn > 1 && np[nn - 1] == 0) --nn;
    mp_limb_t dp[2] = {static_cast<mp_limb_t>(ub), static_cast<mp_limb_t>(ub >> 64)};
    int dn = dp[1] ? 2 : 1;
    if (nn < dn) return 0;
    mp_limb_t qp[5] = {0, 0, 0, 0, 0}, rp[2] = {0, 0};
    mpn_tdiv_qr(qp, rp, 0, np, nn, dp, dn);
    int qn = nn - dn + 1;
    u128 q = 0;
    for (int i = qn - 1; i >= 0; --i) {
      if (i >= 2) {
        if (qp[i] != 0) throw OverflowError("fixed-point divide overflow");
        continue;
      }
      q |= u128(qp[i]) << (64 * i);
    }
    // RNE against remainder: compare 2*rem with divisor.
    u128 rem = (u128(rp[1]) << 64) | rp[0];
    bool half_up = false;
    if (rem >> 127) {
      half_up = true;  // 2*rem overflows 128 bits => definitely > divisor
    } else {
      u128 twice = rem << 1;
      if (twice > ub || (twice == ub && (q & 1))) half_up = true;
    }
    if (half_up) ++q;
    if (detail::bit_length_u128(q) > c.total_bits())
      throw OverflowError("fixed-point divide overflow");
    return negate ? -Raw(q) : Raw(q);
  }

  // Round value to the coarser grid 2^-grid_bits (grid_bits <= frac_bits);
  // representation stays at frac_bits.
  static Raw round_to_grid(Raw v, int grid_bits, const PrecisionContext& c) {
    if (grid_bits >= c.frac_bits) return v;
    int k = c.frac_bits - grid_bits;
    bool negate = v < 0;
    u128 uv = v < 0 ? u128(-(v + 1)) + 1 : u128(v);
    detail::U256 t{uv, 0};
    u128 q = detail::shift_round_even(t, k);
    u128 back = q << k;
    if (detail::bit_length_u128(back) > c.total_bits())
      throw OverflowError("fixed-point grid rounding overflow");
    return negate ? -Raw(back) : Raw(back);
  }

  static Raw from_mpz_scaled(const mpz_class& z) {
    // z is the raw integer already at the target scale.
    mpz_class a = abs(z);
    if (mpz_sizeinbase(a.get_mpz_t(), 2) > 127)
      throw OverflowError("fixed-point conversion overflow");
    u128 m = 0;
    mpz_class rest = a;
    for (int i = 0; i < 2; ++i) {
      mpz_class limb = rest & mpz_class(0xffffffffffffffffUL);
      m |= u128(limb.get_ui()) << (64 * i);
      rest >>= 64;
    }
    return z < 0 ? -Raw(m) : Raw(m);
  }

  static mpz_class to_mpz_raw(Raw v) {
    bool neg = v < 0;
    u128 uv = v < 0 ? u128(-(v + 1)) + 1 : u128(v);
    mpz_class hi(static_cast<unsigned long>(uv >> 64));
    mpz_class r = (hi << 64) + mpz_class(static_cast<unsigned long>(uv & (~u128(0) >> 64)));
    return neg ? mpz_class(-r) : r;
  }

  static double to_double(Raw v, const PrecisionContext& c) {
    bool neg = v < 0;
    u128 uv = v < 0 ? u128(-(v + 1)) + 1 : u128(v);
    double hi = std::ldexp(static_cast<double>(static_cast<u64>(uv >> 64)), 64);
    double d = hi + static_cast<double>(static_cast<u64>(uv));
    d = std::ldexp(d, -c.frac_bits);
    return neg ? -d : d;
  }
};

struct Wide {
  using Raw = mpz_class;
  static const char* name() { return "wide"; }

  static bool context_ok(const PrecisionContext& c) {
    return c.frac_bits >= 1 && c.max_magnitude_bits >= 1;
  }

  static bool fits(const Raw& v, const PrecisionContext& c) {
    mpz_class a = abs(v);
    return mpz_sizeinbase(a.get_mpz_t(), 2) <= static_cast<size_t>(c.total_bits()) || a == 0;
  }

  static void check(const Raw& v, const PrecisionContext& c, long index = -1) {
    if (!fits(v, c))
      throw OverflowError("fixed-point magnitude overflow at index " + std::to_string(index), index);
  }

  static Raw add(const Raw& a, const Raw& b) { return a + b; }
  static Raw sub(const Raw& a, const Raw& b) { return a - b; }
  static Raw neg(const Raw& a) { return -a; }

  // Shift a nonnegative integer right by k bits, RNE.
  static mpz_class shift_round_even(const mpz_class& m, int k) {
    if (k <= 0) return m << (-k);
    mpz_class q = m >> k;
    mpz_class rem = m - (q << k);
    mpz_class half = mpz_class(1) << (k - 1);
    if (rem > half || (rem == half && mpz_odd_p(q.get_mpz_t()))) ++q;
    return q;
  }

  static Raw mul_round(const Raw& a, const Raw& b, const PrecisionContext& c) {
    mpz_class p = a * b;
    bool neg = p < 0;
    mpz_class m = abs(p);
    mpz_class q = shift_round_even(m, c.frac_bits);
    if (mpz_sizeinbase(q.get_mpz_t(), 2) > static_cast<size_t>(c.total_bits()) && q != 0)
      throw OverflowError("fixed-point multiply overflow");
    return neg ? mpz_class(-q) : q;
  }

  static Raw div_round(const Raw& a, const Raw& b, const PrecisionContext& c) {
    if (b == 0) throw DomainError("fixed-point division by zero");
    bool neg = (a < 0) != (b < 0);
    mpz_class ua = abs(a) << c.frac_bits, ub = abs(b);
    mpz_class q, r;
    mpz_tdiv_qr(q.get_mpz_t(), r.get_mpz_t(), ua.get_mpz_t(), ub.get_mpz_t());
    mpz_class twice = r << 1;
    if (twice > ub || (twice == ub && mpz_odd_p(q.get_mpz_t()))) ++q;
    if (mpz_sizeinbase(q.get_mpz_t(), 2) > static_cast<size_t>(c.total_bits()) && q != 0)
      throw OverflowError("fixed-point divide overflow");
    return neg ? mpz_class(-q) : q;
  }

  static Raw round_to_grid(const Raw& v, int grid_bits, const PrecisionContext& c) {
    if (grid_bits >= c.frac_bits) return v;
    int k = c.frac_bits - grid_bits;
    bool neg = v < 0;
    mpz_class q = shift_round_even(abs(v), k);
    mpz_class back = q << k;
    return neg ? mpz_class(-back) : back;
  }

  static Raw from_mpz_scaled(const mpz_class& z) { return z; }
  static mpz_class to_mpz_raw(const Raw& v) { return v; }

  static double to_double(const Raw& v, const PrecisionContext& c) {
    // mpz -> double is truncating but fine for reporting.
    signed long ex = 0;
    double d = mpz_get_d_2exp(&ex, v.get_mpz_t());
    return std::ldexp(d, static_cast<int>(ex) - c.frac_bits);
  }
};

// Round an exact rational to raw fixed-point at the context scale, RNE.
template <class B>
typename B::Raw raw_from_mpq(const mpq_class& q, const PrecisionContext& c) {
  mpz_class num = q.get_num(), den = q.get_den();
  bool neg = num < 0;
  mpz_class n = abs(num) << c.frac_bits;
  mpz_class quo, rem;
  mpz_tdiv_qr(quo.get_mpz_t(), rem.get_mpz_t(), n.get_mpz_t(), den.get_mpz_t());
  mpz_class twice = rem << 1;
  if (twice > den || (twice == den && mpz_odd_p(quo.get_mpz_t()))) ++quo;
  if (mpz_sizeinbase(quo.get_mpz_t(), 2) > static_cast<size_t>(c.total_bits()) && quo != 0)
    throw OverflowError("fixed-point conversion overflow");
  return B::from_mpz_scaled(neg ? mpz_class(-quo) : quo);
}

template <class B>
mpq_class raw_to_mpq(const typename B::Raw& v, const PrecisionContext& c) {
  mpq_class q(B::to_mpz_raw(v), mpz_class(1) << c.frac_bits);
  q.canonicalize();
  return q;
}

template <class B>
typename B::Raw raw_from_double(double d, const PrecisionContext& c) {
  if (!std::isfinite(d)) throw DomainError("non-finite value in fixed-point conversion");
  return raw_from_mpq<B>(mpq_class(d), c);
}

template <class B>
struct Vec {
  using Raw = typename B::Raw;
  std::vector<Raw> x;
  PrecisionContext ctx;

  Vec() = default;
  Vec(size_t n, PrecisionContext c) : x(n), ctx(c) {}
  size_t size() const { return x.size(); }
  Raw& operator[](size_t i) { return x[i]; }
  const Raw& operator[](size_t i) const { return x[i]; }
};

template <class B>
struct Mat {
  using Raw = typename B::Raw;
  int rows = 0, cols = 0;
  std::vector<Raw> a;
  PrecisionContext ctx;

  Mat() = default;
  Mat(int r, int c, PrecisionContext cx) : rows(r), cols(c), a(size_t(r) * c), ctx(cx) {}
  Raw& operator()(int i, int j) { return a[size_t(i) * cols + j]; }
  const Raw& operator()(int i, int j) const { return a[size_t(i) * cols + j]; }
};

// Exact dot product accumulators; the single rounding happens in finish().
struct NarrowAcc {
  detail::U256 pos{};  // two's complement signed 256-bit
  void mac(i128 a, i128 b) {
    bool neg = (a < 0) != (b < 0);
    u128 ua = a < 0 ? u128(-(a + 1)) + 1 : u128(a);
    u128 ub = b < 0 ? u128(-(b + 1)) + 1 : u128(b);
    detail::U256 p = detail::mul_u128(ua, ub);
    if (neg) p = detail::negate(p);
    detail::add_acc(pos, p);
  }
  i128 finish(const PrecisionContext& c) const {
    detail::U256 v = pos;
    bool neg = (v.hi >> 127) != 0;
    if (neg) v = detail::negate(v);
    u128 q = detail::shift_round_even(v, c.frac_bits);
    if (detail::bit_length_u128(q) > c.total_bits())
      throw OverflowError("fixed-point dot product overflow");
    return neg ? -i128(q) : i128(q);
  }
};

struct WideAcc {
  mpz_class s;
  void mac(const mpz_class& a, const mpz_class& b) { s += a * b; }
  mpz_class finish(const PrecisionContext& c) const {
    bool neg = s < 0;
    mpz_class q = Wide::shift_round_even(abs(s), c.frac_bits);
    return neg ? mpz_class(-q) : q;
  }
};

template <class B>
struct AccOf;
template <>
struct AccOf<Narrow> {
  using type = NarrowAcc;
};
template <>
struct AccOf<Wide> {
  using type = WideAcc;
};

template <class B>
typename B::Raw dot(const Vec<B>& a, const Vec<B>& b) {
  typename AccOf<B>::type acc;
  for (size_t i = 0; i < a.size(); ++i) acc.mac(a[i], b[i]);
  return acc.finish(a.ctx);
}

// y = A x (each output entry is one exactly-accumulated dot, rounded once)
template <class B>
Vec<B> matvec(const Mat<B>& A, const Vec<B>& x) {
  Vec<B> y(A.rows, A.ctx);
  for (int i = 0; i < A.rows; ++i) {
    typename AccOf<B>::type acc;
    for (int j = 0; j < A.cols; ++j) acc.mac(A(i, j), x[j]);
    y[i] = acc.finish(A.ctx);
  }
  return y;
}

// y = A^T x
template <class B>
Vec<B> matvec_t(const Mat<B>& A, const Vec<B>& x) {
  Vec<B> y(A.cols, A.ctx);
  for (int j = 0; j < A.cols; ++j) {
    typename AccOf<B>::type acc;
    for (int i = 0; i < A.rows; ++i) acc.mac(A(i, j), x[i]);
    y[j] = acc.finish(A.ctx);
  }
  return y;
}

template <class B>
Mat<B> matmul(const Mat<B>& A, const Mat<B>& C) {
  Mat<B> R(A.rows, C.cols, A.ctx);
  for (int i = 0; i < A.rows; ++i)
    for (int k = 0; k < C.cols; ++k) {
      typename AccOf<B>::type acc;
      for (int j = 0; j < A.cols; ++j) acc.mac(A(i, j), C(j, k));
      R(i, k) = acc.finish(A.ctx);
    }
  return R;
}

// R = A^T diag(w) A, one rounding per output entry.
template <class B>
Mat<B> gram_weighted(const Mat<B>& A, const Vec<B>& w, const PrecisionContext& out_ctx) {
  Mat<B> R(A.cols, A.cols, out_ctx);
  // Two rounded stages: first scale rows (exact products rounded once), then
  // accumulate. Keeps everything within the double-width accumulator.
  Mat<B> WA(A.rows, A.cols, A.ctx);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) WA(i, j) = B::mul_round(w[i], A(i, j), A.ctx);
  for (int j = 0; j < A.cols; ++j)
    for (int k = 0; k < A.cols; ++k) {
      typename AccOf<B>::type acc;
      for (int i = 0; i < A.rows; ++i) acc.mac(A(i, j), WA(i, k));
      R(j, k) = acc.finish(out_ctx);
    }
  return R;
}

template <class B>
double norm2_double(const Vec<B>& v) {
  long double s = 0;
  for (size_t i = 0; i < v.size(); ++i) {
    long double d = static_cast<long double>(B::to_double(v[i], v.ctx));
    s += d * d;
  }
  return static_cast<double>(std::sqrt((double)s));
}

template <class B>
Vec<B> from_doubles(const std::vector<double>& d, const PrecisionContext& c) {
  Vec<B> v(d.size(), c);
  for (size_t i = 0; i < d.size(); ++i) v[i] = raw_from_double<B>(d[i], c);
  return v;
}

template <class B>
std::vector<double> to_doubles(const Vec<B>& v) {
  std::vector<double> d(v.size());
  for (size_t i = 0; i < v.size(); ++i) d[i] = B::to_double(v[i], v.ctx);
  return d;
}

using NarrowVec = Vec<Narrow>;
using NarrowMat = Mat<Narrow>;
using WideVec = Vec<Wide>;
using WideMat = Mat<Wide>;

}  // namespace fx

// Default solver backend. FxVector/FxMatrix in module contracts refer to these.
using FxVector = fx::Vec<fx::Narrow>;
using FxMatrix = fx::Mat<fx::Narrow>;

}  // namespace bitopt
