#include "bitopt/generate.hpp"

#include <algorithm>
#include <cmath>

#include "bitopt/rng.hpp"

namespace bitopt::gen {

using N = fx::Narrow;

lp::LPInstance random_lp(int n, int d, std::uint64_t seed, PrecisionContext ctx) {
  if (n <= d || d < 2) throw ParameterError("random_lp: need n > d >= 2");
  CounterRng rng(seed, /*stream=*/11);
  lp::LPInstance inst;
  inst.a = FxMatrix(n, d, ctx);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j + 1 < d; ++j)
      inst.a(i, j) = fx::raw_from_double<N>(rng.next_normal(), ctx);
    inst.a(i, d - 1) = fx::i128(1) << ctx.frac_bits;  // ones column bounds the polytope
  }
  // Feasible interior point in [1, 2]^n certifies the inner radius.
  FxVector xf(n, ctx);
  double rmin = 2.0, l1 = 0;
  for (int i = 0; i < n; ++i) {
    double v = 1.0 + rng.next_double();
    xf[i] = fx::raw_from_double<N>(v, ctx);
    rmin = std::min(rmin, v);
    l1 += v;
  }
  inst.b = fx::matvec_t(inst.a, xf);
  inst.c = FxVector(n, ctx);
  for (int i = 0; i < n; ++i)
    inst.c[i] = fx::raw_from_double<N>(0.5 + rng.next_double(), ctx);
  inst.r_inner = rmin;
  // 1^T x equals b_{d-1} for every feasible x, so ||x||_2 <= ||x||_1 = that sum.
  inst.r_outer = N::to_double(inst.b[d - 1], ctx);
  (void)l1;
  return inst;
}

FxMatrix bidiagonal(int d, PrecisionContext ctx) {
  FxMatrix a(d, d, ctx);
  for (int i = 0; i < d; ++i) {
    a(i, i) = fx::i128(1) << ctx.frac_bits;
    if (i > 0) a(i, i - 1) = fx::i128(2) << ctx.frac_bits;
  }
  return a;
}

lp::LPInstance lp_bidiagonal(int n, PrecisionContext ctx) {
  if (n < 3) throw ParameterError("lp_bidiagonal: need n >= 3");
  lp::LPInstance inst;
  const int d = n - 1;
  const fx::i128 one = fx::i128(1) << ctx.frac_bits;
  const fx::i128 two = fx::i128(2) << ctx.frac_bits;
  // Rows 0..n-2 carry the lower bidiagonal; the last row repeats e_1.
  inst.a = FxMatrix(n, d, ctx);
  for (int i = 0; i < n - 1; ++i) {
    inst.a(i, i) = one;
    if (i > 0) inst.a(i, i - 1) = two;
  }
  inst.a(n - 1, 0) = one;

  inst.b = FxVector(d, ctx);
  inst.b[0] = fx::raw_from_mpq<N>(mpq_class(4, 3), ctx);
  for (int j = 1; j < d; ++j) inst.b[j] = one;
  inst.c = FxVector(n, ctx);
  for (int i = 0; i < n; ++i) inst.c[i] = one;
  inst.r_inner = 1.0 / 3.0;
  inst.r_outer = 2.0 * std::sqrt(static_cast<double>(n));
  return inst;
}

FxMatrix rank_deficient(int n, int d, std::uint64_t seed, PrecisionContext ctx) {
  CounterRng rng(seed, 13);
  FxMatrix a(n, d, ctx);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j + 1 < d; ++j)
      a(i, j) = fx::raw_from_double<N>(rng.next_normal(), ctx);
  for (int i = 0; i < n; ++i) a(i, d - 1) = a(i, 0);  // duplicate column
  return a;
}

}  // namespace bitopt::gen
