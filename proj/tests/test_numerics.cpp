#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bitopt/numerics.hpp"
#include "bitopt/rational.hpp"
#include "bitopt/rng.hpp"

using namespace bitopt;

namespace {

mpq_class pi_reference() {
  // 50 decimal digits of pi as an exact fraction.
  mpz_class num("314159265358979323846264338327950288419716939937510");
  mpz_class den;
  mpz_ui_pow_ui(den.get_mpz_t(), 10, 50);
  mpq_class q(num, den);
  q.canonicalize();
  return q;
}

rat::RatMatrix random_int_matrix(int n, int m, CounterRng& rng, int lo, int hi) {
  rat::RatMatrix a(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      a(i, j) = mpq_class(static_cast<long>(rng.next_below(hi - lo + 1)) + lo);
  return a;
}

}  // namespace

TEST_CASE("round_fx exact and bounded cases") {
  PrecisionContext ctx;  // 64/63 default

  rat::RatVector one{mpq_class(1)};
  auto r1 = num::round_fx(one, std::ldexp(1.0, -8), ctx);
  CHECK(fx::raw_to_mpq<fx::Narrow>(r1[0], ctx) == 1);

  rat::RatVector third{mpq_class(1, 3)};
  auto r2 = num::round_fx(third, std::ldexp(1.0, -4), ctx);
  mpq_class v = fx::raw_to_mpq<fx::Narrow>(r2[0], ctx);
  CHECK(abs(v - mpq_class(1, 3)) <= mpq_class(1, 16));
  // Representable with 4 fractional bits.
  mpq_class scaled = v * 16;
  CHECK(scaled.get_den() == 1);

  rat::RatVector pi{pi_reference()};
  auto r3 = num::round_fx(pi, std::ldexp(1.0, -20), ctx);
  mpq_class err = abs(fx::raw_to_mpq<fx::Narrow>(r3[0], ctx) - pi_reference());
  CHECK(err <= mpq_class(1, 1 << 20));
}

TEST_CASE("round_fx idempotence") {
  PrecisionContext ctx;
  CounterRng rng(7);
  rat::RatVector x(32);
  for (auto& v : x)
    v = mpq_class(static_cast<long>(rng.next_below(20001)) - 10000, 1 + static_cast<long>(rng.next_below(997)));
  double eps = std::ldexp(1.0, -12);
  auto once = num::round_fx(x, eps, ctx);
  auto twice = num::round_fx(once, eps);
  for (size_t i = 0; i < x.size(); ++i) CHECK(once[i] == twice[i]);
}

TEST_CASE("round_fx overflow names the index") {
  PrecisionContext ctx{16, 15};
  rat::RatVector x{mpq_class(1), mpq_class(1) << 40};
  try {
    num::round_fx(x, std::ldexp(1.0, -8), ctx);
    FAIL("expected overflow");
  } catch (const OverflowError& e) {
    CHECK(e.index() == 1);
  }
}

TEST_CASE("qround exact powers") {
  mpq_class q(101, 100);
  auto r = num::qround_vec(rat::RatVector{mpq_class(1)}, q);
  CHECK(r.value[0] == 1);
  CHECK(r.exponent[0] == 0);

  auto r2 = num::qround_vec(rat::RatVector{mpq_class(2)}, mpq_class(2));
  CHECK(r2.value[0] == 2);
  CHECK(r2.exponent[0] == 1);
}

TEST_CASE("qround 1.5 at q=101/100 matches brute force") {
  mpq_class q(101, 100);
  mpq_class target(3, 2);
  // Brute-force argmin over k in [0, 100].
  long best_k = 0;
  mpq_class best_err = abs(num::pow_q(q, 0) - target);
  for (long k = 1; k <= 100; ++k) {
    mpq_class err = abs(num::pow_q(q, k) - target);
    if (err < best_err) {
      best_err = err;
      best_k = k;
    }
  }
  CHECK(best_k == 41);
  auto r = num::qround_vec(rat::RatVector{target}, q);
  CHECK(r.exponent[0] == best_k);
  CHECK(r.value[0] == num::pow_q(q, best_k));
}

TEST_CASE("qround errors and relative accuracy") {
  CHECK_THROWS_AS(num::qround_vec(rat::RatVector{mpq_class(0)}, mpq_class(101, 100)), DomainError);
  CHECK_THROWS_AS(num::qround_vec(rat::RatVector{mpq_class(1)}, mpq_class(1)), ParameterError);

  CounterRng rng(11);
  mpq_class q(101, 100);
  for (int t = 0; t < 50; ++t) {
    double mag = std::exp((rng.next_double() - 0.5) * 20.0);
    mpq_class x(mag * (rng.next_bool() ? 1 : -1));
    auto r = num::qround_vec(rat::RatVector{x}, q);
    mpq_class rel = abs(r.value[0] / x - 1);
    CHECK(rel <= mpq_class(1, 100));
  }
}

TEST_CASE("exact_solve identity and diagonal") {
  rat::RatMatrix id = rat::RatMatrix::identity(3);
  rat::RatVector b{mpq_class(1), mpq_class(2), mpq_class(3)};
  auto x = rat::exact_solve(id, b);
  CHECK(x == b);

  rat::RatMatrix d(2, 2);
  d(0, 0) = 2;
  d(1, 1) = 4;
  auto x2 = rat::exact_solve(d, rat::RatVector{mpq_class(1), mpq_class(1)});
  CHECK(x2[0] == mpq_class(1, 2));
  CHECK(x2[1] == mpq_class(1, 4));
}

TEST_CASE("exact_solve random residual oracle") {
  CounterRng rng(23);
  for (int t = 0; t < 10; ++t) {
    rat::RatMatrix m = random_int_matrix(5, 5, rng, -9, 9);
    rat::RatVector b(5);
    for (auto& v : b) v = mpq_class(static_cast<long>(rng.next_below(19)) - 9);
    rat::RatVector x;
    try {
      x = rat::exact_solve(m, b);
    } catch (const SingularMatrixError&) {
      continue;  // singular draw; skip
    }
    rat::RatVector r = rat::matvec(m, x);
    for (int i = 0; i < 5; ++i) CHECK(r[i] == b[i]);
  }
}

TEST_CASE("exact_solve reports the deficient pivot column") {
  rat::RatMatrix m(3, 3);
  m(0, 0) = 1;
  m(1, 0) = 2;  // columns 1 and 2 vanish
  try {
    rat::exact_solve(m, rat::RatVector{mpq_class(1), mpq_class(2), mpq_class(0)});
    FAIL("expected singular");
  } catch (const SingularMatrixError& e) {
    CHECK(e.pivot_column() >= 1);
  }
}

TEST_CASE("two_norm_est within factor 2 on known matrices") {
  PrecisionContext ctx;
  for (double scale : {1.0, 3.0, 10.0}) {
    FxMatrix a(4, 4, ctx);
    for (int i = 0; i < 4; ++i) a(i, i) = fx::raw_from_double<fx::Narrow>(scale * (i + 1) / 4.0, ctx);
    double est = num::two_norm_est(a);
    CHECK(est >= scale / 2);
    CHECK(est <= scale * 2);
  }
}

TEST_CASE("cond_estimate identity and diagonal") {
  PrecisionContext ctx;
  FxMatrix id(5, 5, ctx);
  for (int i = 0; i < 5; ++i) id(i, i) = fx::i128(1) << ctx.frac_bits;
  double c = num::cond_estimate(id);
  CHECK(c >= 0.25);
  CHECK(c <= 4.0);

  FxMatrix d(2, 2, ctx);
  d(0, 0) = fx::i128(1) << ctx.frac_bits;
  d(1, 1) = fx::i128(10) << ctx.frac_bits;
  double c2 = num::cond_estimate(d);
  CHECK(c2 >= 10.0 / 4);
  CHECK(c2 <= 10.0 * 4);
}

TEST_CASE("cond_estimate bidiagonal growth") {
  // 1 on the diagonal, 2 on the subdiagonal, d = 20: condition number at
  // least 2^18 (up to the factor-4 estimate slack).
  PrecisionContext ctx;
  const int d = 20;
  FxMatrix a(d, d, ctx);
  for (int i = 0; i < d; ++i) {
    a(i, i) = fx::i128(1) << ctx.frac_bits;
    if (i > 0) a(i, i - 1) = fx::i128(2) << ctx.frac_bits;
  }
  double c = num::cond_estimate(a);
  CHECK(c >= std::ldexp(1.0, 18));
}

TEST_CASE("fixed backends agree with rational reference") {
  CounterRng rng(5);
  PrecisionContext narrow_ctx{48, 40};
  PrecisionContext wide_ctx{170, 60};
  for (int t = 0; t < 200; ++t) {
    double da = (rng.next_double() - 0.5) * 1e5;
    double db = (rng.next_double() - 0.5) * 1e5;
    if (std::fabs(db) < 1e-3) db = 1.0;

    auto na = fx::raw_from_double<fx::Narrow>(da, narrow_ctx);
    auto nb = fx::raw_from_double<fx::Narrow>(db, narrow_ctx);
    auto wa = fx::raw_from_double<fx::Wide>(da, wide_ctx);
    auto wb = fx::raw_from_double<fx::Wide>(db, wide_ctx);

    // Multiply: both backends match the exactly-rounded product.
    mpq_class qa = fx::raw_to_mpq<fx::Narrow>(na, narrow_ctx);
    mpq_class qb = fx::raw_to_mpq<fx::Narrow>(nb, narrow_ctx);
    auto prod = fx::Narrow::mul_round(na, nb, narrow_ctx);
    mpq_class got = fx::raw_to_mpq<fx::Narrow>(prod, narrow_ctx);
    mpq_class err = abs(got - qa * qb);
    CHECK(err <= mpq_class(1, mpz_class(1) << (narrow_ctx.frac_bits + 1)));

    auto div = fx::Narrow::div_round(na, nb, narrow_ctx);
    mpq_class gotd = fx::raw_to_mpq<fx::Narrow>(div, narrow_ctx);
    mpq_class errd = abs(gotd - qa / qb);
    CHECK(errd <= mpq_class(1, mpz_class(1) << (narrow_ctx.frac_bits + 1)));

    // Wide backend on its own grid.
    mpq_class qaw = fx::raw_to_mpq<fx::Wide>(wa, wide_ctx);
    mpq_class qbw = fx::raw_to_mpq<fx::Wide>(wb, wide_ctx);
    auto prodw = fx::Wide::mul_round(wa, wb, wide_ctx);
    mpq_class errw = abs(fx::raw_to_mpq<fx::Wide>(prodw, wide_ctx) - qaw * qbw);
    CHECK(errw <= mpq_class(1, mpz_class(1) << (wide_ctx.frac_bits + 1)));
    auto divw = fx::Wide::div_round(wa, wb, wide_ctx);
    mpq_class errdw = abs(fx::raw_to_mpq<fx::Wide>(divw, wide_ctx) - qaw / qbw);
    CHECK(errdw <= mpq_class(1, mpz_class(1) << (wide_ctx.frac_bits + 1)));
  }
}

TEST_CASE("dot products round once") {
  PrecisionContext ctx{32, 40};
  CounterRng rng(9);
  for (int t = 0; t < 20; ++t) {
    FxVector a(8, ctx), b(8, ctx);
    rat::RatVector qa(8), qb(8);
    for (int i = 0; i < 8; ++i) {
      double da = (rng.next_double() - 0.5) * 100;
      double db = (rng.next_double() - 0.5) * 100;
      a[i] = fx::raw_from_double<fx::Narrow>(da, ctx);
      b[i] = fx::raw_from_double<fx::Narrow>(db, ctx);
      qa[i] = fx::raw_to_mpq<fx::Narrow>(a[i], ctx);
      qb[i] = fx::raw_to_mpq<fx::Narrow>(b[i], ctx);
    }
    auto d = fx::dot(a, b);
    mpq_class exact = rat::dot(qa, qb);
    mpq_class err = abs(fx::raw_to_mpq<fx::Narrow>(d, ctx) - exact);
    CHECK(err <= mpq_class(1, mpz_class(1) << (ctx.frac_bits + 1)));
  }
}
