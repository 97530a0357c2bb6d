#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bitopt/numerics.hpp"
#include "bitopt/rng.hpp"
#include "bitopt/sketch.hpp"

using namespace bitopt;

namespace {

FxMatrix random_matrix(int n, int d, std::uint64_t seed, PrecisionContext ctx) {
  CounterRng rng(seed);
  FxMatrix a(n, d, ctx);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      a(i, j) = fx::raw_from_double<fx::Narrow>(rng.next_normal(), ctx);
  return a;
}

}  // namespace

TEST_CASE("embedding structure: entries, column counts, total mass") {
  // Large n so the row budget is genuine (not the identity fallback).
  auto e = sketch::sparse_embedding(/*n=*/4000, /*d=*/5, /*eps=*/0.5, /*delta=*/0.05, /*seed=*/17);
  REQUIRE(!e.identity);
  // s is a power of four.
  int s = e.s;
  while (s > 1) {
    CHECK(s % 4 == 0);
    s /= 4;
  }
  // Each column has exactly s nonzeros at distinct rows; total squared mass is n.
  for (int c = 0; c < e.cols; ++c) {
    CHECK(static_cast<int>(e.row_index[c].size()) == e.s);
    for (size_t k = 0; k < e.row_index[c].size(); ++k) {
      CHECK(e.row_index[c][k] >= 0);
      CHECK(e.row_index[c][k] < e.rows);
      CHECK((e.sign[c][k] == 1 || e.sign[c][k] == -1));
    }
  }
  // sum_ij S_ij^2 = cols * s * (1/s) = cols.
  double mass = double(e.cols) * e.s * (1.0 / e.s);
  CHECK(mass == doctest::Approx(e.cols));
}

TEST_CASE("embedding degenerates to identity when rows exceed n") {
  auto e = sketch::sparse_embedding(200, 20, 0.5, 0.05, 3);
  CHECK(e.identity);
  CHECK(e.rows == 200);
}

TEST_CASE("embedding json round trip") {
  auto e = sketch::sparse_embedding(4000, 4, 0.5, 0.05, 99);
  auto text = sketch::to_json(e);
  auto back = sketch::embedding_from_json(text);
  CHECK(back.rows == e.rows);
  CHECK(back.s == e.s);
  CHECK(back.row_index == e.row_index);
  CHECK(back.sign == e.sign);
}

TEST_CASE("sketch spectral quality on a genuine embedding") {
  // Eigenvalues of (A^T A)^{-1/2} (A^T S^T S A) (A^T A)^{-1/2} within [1-eps, 1+eps]
  // in at least 95 of 100 seeded trials at eps = 0.5.
  PrecisionContext ctx;
  const int n = 4000, d = 5;
  FxMatrix a = random_matrix(n, d, 1234, ctx);
  num::LMat al = num::to_lmat(a);
  num::LMat gram = num::gram(al);
  num::EigenSym ge = num::jacobi_eigen(gram);

  int good = 0;
  for (int seed = 0; seed < 100; ++seed) {
    auto e = sketch::sparse_embedding(n, d, 0.5, 0.05, seed);
    REQUIRE(!e.identity);
    FxMatrix sa = sketch::apply(e, a);
    num::LMat sl = num::to_lmat(sa);
    num::LMat sg = num::gram(sl);
    // W = G^{-1/2} SG G^{-1/2} via the eigendecomposition of G.
    num::LMat w(d, d);
    num::LMat gh(d, d);  // G^{-1/2}
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        long double s = 0;
        for (int k = 0; k < d; ++k)
          s += ge.vectors(i, k) * ge.vectors(j, k) / std::sqrt((double)ge.values[k]);
        gh(i, j) = s;
      }
    num::LMat t(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        long double s = 0;
        for (int k = 0; k < d; ++k) s += gh(i, k) * sg(k, j);
        t(i, j) = s;
      }
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        long double s = 0;
        for (int k = 0; k < d; ++k) s += t(i, k) * gh(k, j);
        w(i, j) = s;
      }
    num::EigenSym we = num::jacobi_eigen(w);
    bool ok = we.values.front() >= 0.5 && we.values.back() <= 1.5;
    good += ok ? 1 : 0;
  }
  CHECK(good >= 95);
}

TEST_CASE("spectral_preconditioner parameter checks and loewner bounds") {
  PrecisionContext ctx;
  CHECK_THROWS_AS(sketch::spectral_preconditioner(random_matrix(20, 3, 5, ctx), 0.3, 1),
                  ParameterError);

  // eps1 = 1/2: lambda = 3, 1/(1-eps1) = 2 = 1 + 2^0.
  FxMatrix a = random_matrix(300, 15, 42, ctx);
  auto p = sketch::spectral_preconditioner(a, 0.5, 7);
  CHECK(p.lambda == doctest::Approx(3.0));

  // Verify A^T A <= M <= lambda A^T A by eigenvalues of M^{-1/2} A^T A M^{-1/2}.
  num::LMat g = num::gram(num::to_lmat(a));
  num::LMat m = num::to_lmat(p.m);
  num::EigenSym me = num::jacobi_eigen(m);
  int d = a.cols;
  num::LMat mh(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      long double s = 0;
      for (int k = 0; k < d; ++k)
        s += me.vectors(i, k) * me.vectors(j, k) / std::sqrt((double)me.values[k]);
      mh(i, j) = s;
    }
  num::LMat t(d, d), w(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      long double s = 0;
      for (int k = 0; k < d; ++k) s += mh(i, k) * g(k, j);
      t(i, j) = s;
    }
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      long double s = 0;
      for (int k = 0; k < d; ++k) s += t(i, k) * mh(k, j);
      w(i, j) = s;
    }
  num::EigenSym we = num::jacobi_eigen(w);
  CHECK(we.values.back() <= 1.0 + 1e-9);          // M >= A^T A
  CHECK(we.values.front() >= 1.0 / p.lambda - 1e-9);  // M <= lambda A^T A
}

TEST_CASE("leverage scores: identity, duplicates, rank identity") {
  PrecisionContext ctx;
  FxMatrix id(4, 4, ctx);
  for (int i = 0; i < 4; ++i) id(i, i) = fx::i128(1) << ctx.frac_bits;
  auto tau = sketch::leverage_scores(id);
  for (auto t : tau) CHECK(t == doctest::Approx(1.0));

  // Duplicated orthogonal rows share leverage 1/2.
  FxMatrix dup(4, 2, ctx);
  dup(0, 0) = dup(1, 0) = fx::i128(1) << ctx.frac_bits;
  dup(2, 1) = dup(3, 1) = fx::i128(1) << ctx.frac_bits;
  auto tau2 = sketch::leverage_scores(dup);
  for (auto t : tau2) CHECK(t == doctest::Approx(0.5));

  FxMatrix a = random_matrix(50, 5, 77, ctx);
  auto tau3 = sketch::leverage_scores(a);
  double sum = 0;
  for (auto t : tau3) {
    CHECK(t >= -1e-12);
    CHECK(t <= 1.0 + 1e-12);
    sum += t;
  }
  CHECK(std::fabs(sum - 5.0) <= 1e-6);
}

TEST_CASE("undersample_refine: S = I case and monotonicity") {
  PrecisionContext ctx;
  FxMatrix a = random_matrix(40, 4, 3, ctx);
  auto tau = sketch::leverage_scores(a);

  // Huge c forces every row into the sample; u' = tau exactly (min{1, tau}).
  sketch::LeverageEstimate est;
  est.u.assign(40, 1.0);
  est.alpha = 1.0;
  est.c = 1e9;
  auto r = sketch::undersample_refine(a, est, 0.0, 5);
  REQUIRE(!r.empty_sample);
  CHECK(r.sampled_rows == 40);
  for (int i = 0; i < 40; ++i) CHECK(r.u[i] == doctest::Approx(tau[i]).epsilon(1e-9));

  // Componentwise u' <= u by construction.
  for (int i = 0; i < 40; ++i) CHECK(r.u[i] <= est.u[i] + 1e-15);
}

TEST_CASE("undersample_refine: overestimate rate and sum bound") {
  PrecisionContext ctx;
  FxMatrix a = random_matrix(100, 8, 21, ctx);
  auto tau = sketch::leverage_scores(a);
  sketch::LeverageEstimate est;
  est.u.resize(100);
  for (int i = 0; i < 100; ++i) est.u[i] = 2.0 * tau[i];
  est.alpha = 0.5;
  est.c = 20.0;
  const double beta = 1.0;
  const double sum_bound = 2.0 * 8 * (1 + beta) / est.alpha;

  int violations = 0;
  for (int seed = 0; seed < 200; ++seed) {
    auto r = sketch::undersample_refine(a, est, beta, seed);
    double sum = 0;
    bool under = false;
    for (int i = 0; i < 100; ++i) {
      sum += r.u[i];
      CHECK(r.u[i] <= est.u[i] + 1e-12);
      if (r.u[i] < tau[i] - 1e-9) under = true;
    }
    CHECK(sum <= sum_bound + 1e-9);
    violations += under ? 1 : 0;
  }
  CHECK(violations <= 10);  // <= 5% of 200 trials
}
