#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bitopt/rng.hpp"
#include "bitopt/sketch.hpp"
#include "bitopt/solvers.hpp"

using namespace bitopt;
using N = fx::Narrow;

namespace {

FxMatrix random_matrix(int n, int d, std::uint64_t seed, PrecisionContext ctx) {
  CounterRng rng(seed);
  FxMatrix a(n, d, ctx);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = fx::raw_from_double<N>(rng.next_normal(), ctx);
  return a;
}

FxVector random_vector(int n, std::uint64_t seed, PrecisionContext ctx) {
  CounterRng rng(seed);
  FxVector v(n, ctx);
  for (int i = 0; i < n; ++i) v[i] = fx::raw_from_double<N>(rng.next_normal(), ctx);
  return v;
}

// Exact least-squares solution of the (weighted) normal equations.
rat::RatVector normal_solution(const FxMatrix& a, const FxVector& b) {
  rat::RatMatrix aq = rat::from_fx(a);
  rat::RatVector bq = rat::from_fx(b);
  rat::RatMatrix g = rat::matmul(rat::transpose(aq), aq);
  rat::RatVector rhs = rat::matvec_t(aq, bq);
  return rat::exact_solve(g, rhs);
}

mpq_class m_norm_sq(const rat::RatMatrix& m, const rat::RatVector& v) {
  rat::RatVector mv = rat::matvec(m, v);
  return rat::dot(v, mv);
}

}  // namespace

TEST_CASE("richardson config validation") {
  CHECK_THROWS_AS(solv::RichardsonConfig(0.5, 0.0, 10, 1e-6), ParameterError);
  CHECK_THROWS_AS(solv::RichardsonConfig(2.0, 0.6, 10, 1e-6), ParameterError);
  solv::RichardsonConfig ok(3.0, 1e-3, 100, 1e-9);
  CHECK(ok.contraction() == doctest::Approx(2.0 / 3.0 + 1e-3));
}

TEST_CASE("richardson: identity with exact preconditioner converges in one step") {
  PrecisionContext ctx;
  const int n = 5;
  FxMatrix a(n, n, ctx);
  for (int i = 0; i < n; ++i) a(i, i) = fx::i128(1) << ctx.frac_bits;
  auto minv = im::make_dense_gram_inverse<N>(a, [&] {
    FxVector w(n, ctx);
    for (auto& v : w.x) v = fx::i128(1) << ctx.frac_bits;
    return w;
  }(), 1e-16);
  FxVector b = random_vector(n, 3, ctx);
  solv::RichardsonConfig cfg(1.0, 1e-15, 1, 0.5);
  auto x = solv::richardson(a, b, *minv, cfg);
  for (int i = 0; i < n; ++i)
    CHECK(std::fabs(N::to_double(N::sub(x[i], b[i]), ctx)) <= 1e-12);
}

TEST_CASE("richardson: exact gram preconditioner reaches eps ||b|| in one step") {
  PrecisionContext ctx;
  const int n = 20, d = 4;
  FxMatrix a = random_matrix(n, d, 7, ctx);
  FxVector w(n, ctx);
  for (auto& v : w.x) v = fx::i128(1) << ctx.frac_bits;
  auto minv = im::make_dense_gram_inverse<N>(a, w, 1e-15);
  FxVector b = random_vector(n, 9, ctx);
  solv::RichardsonConfig cfg(1.0, 1e-12, 1, 0.5);
  auto x1 = solv::richardson(a, b, *minv, cfg);

  rat::RatVector xs = normal_solution(a, b);
  rat::RatMatrix aq = rat::from_fx(a);
  rat::RatMatrix g = rat::matmul(rat::transpose(aq), aq);
  rat::RatVector diff(d);
  for (int i = 0; i < d; ++i) diff[i] = fx::raw_to_mpq<N>(x1[i], ctx) - xs[i];
  double err = std::sqrt(m_norm_sq(g, diff).get_d());
  double bnorm = fx::norm2_double(b);
  CHECK(err <= 1e-10 * bnorm);
}

TEST_CASE("richardson contraction ratio under sketch preconditioner") {
  PrecisionContext ctx;
  const int n = 40, d = 8;
  FxMatrix a = random_matrix(n, d, 21, ctx);
  FxVector b = random_vector(n, 23, ctx);
  auto pre = sketch::spectral_preconditioner(a, 0.5, 5);
  const double eps_op = 1e-6;
  auto inv = im::high_precision_inverse<N>(pre.m, eps_op / (d * pre.lambda * 100.0),
                                           im::InverseTarget::kForward);
  im::DenseInverseOperator<N> minv(std::move(inv.z), inv.forward_bound, "t");

  std::vector<FxVector> iterates;
  solv::RichardsonConfig cfg(pre.lambda, eps_op, 30, 1e-300);
  solv::richardson(a, b, minv, cfg, nullptr, &iterates);

  rat::RatVector xs = normal_solution(a, b);
  rat::RatMatrix mq = rat::from_fx(pre.m);
  double prev = -1;
  const double limit = 1.0 - 1.0 / pre.lambda + eps_op;
  for (size_t k = 0; k < iterates.size(); ++k) {
    rat::RatVector diff(d);
    for (int i = 0; i < d; ++i) diff[i] = fx::raw_to_mpq<N>(iterates[k][i], ctx) - xs[i];
    double err = std::sqrt(m_norm_sq(mq, diff).get_d());
    if (k > 0 && prev > 1e-13) CHECK(err / prev <= limit + 1e-9);
    prev = err;
  }
}

TEST_CASE("solve_regression trivial geometry") {
  PrecisionContext ctx;
  const int n = 12, d = 3;
  // Orthonormal columns: scaled unit columns.
  FxMatrix a(n, d, ctx);
  for (int j = 0; j < d; ++j) a(j, j) = fx::i128(1) << ctx.frac_bits;

  // b in range(A): b = A y.
  FxVector y = random_vector(d, 31, ctx);
  FxVector b = fx::matvec(a, y);
  auto res = solv::solve_regression(a, b, 1e-8, 4);
  for (int i = 0; i < d; ++i)
    CHECK(std::fabs(N::to_double(N::sub(res.x[i], y[i]), ctx)) <= 1e-7);

  // b orthogonal to range(A): optimal x = 0.
  FxVector bp(n, ctx);
  bp[d] = fx::i128(1) << ctx.frac_bits;  // e_{d+1}
  auto res2 = solv::solve_regression(a, bp, 1e-8, 4);
  for (int i = 0; i < d; ++i) CHECK(std::fabs(N::to_double(res2.x[i], ctx)) <= 1e-7);
}

TEST_CASE("solve_regression meets the A^T A-norm contract") {
  PrecisionContext ctx;
  const int n = 60, d = 10;
  FxMatrix a = random_matrix(n, d, 41, ctx);
  FxVector b = random_vector(n, 43, ctx);
  const double eps = 1e-6;
  auto res = solv::solve_regression(a, b, eps, 11);

  rat::RatVector xs = normal_solution(a, b);
  rat::RatMatrix aq = rat::from_fx(a);
  rat::RatMatrix g = rat::matmul(rat::transpose(aq), aq);
  rat::RatVector diff(d);
  for (int i = 0; i < d; ++i) diff[i] = fx::raw_to_mpq<N>(res.x[i], ctx) - xs[i];
  double err = std::sqrt(m_norm_sq(g, diff).get_d());
  // ||pi_A b||_2 = ||x*||_{A^T A}
  double proj = std::sqrt(m_norm_sq(g, xs).get_d());
  CHECK(err <= eps * proj);
}

TEST_CASE("constrained regress: unweighted projection and scale invariance") {
  PrecisionContext ctx;
  const int n = 10, d = 3;
  FxMatrix a(n, d, ctx);
  for (int j = 0; j < d; ++j) a(j, j) = fx::i128(1) << ctx.frac_bits;  // orthonormal
  FxVector b = random_vector(d, 51, ctx);
  FxVector w(n, ctx);
  for (auto& v : w.x) v = fx::i128(1) << ctx.frac_bits;

  FxVector winv = w;  // W = I
  auto minv = im::make_dense_gram_inverse<N>(a, winv, 1e-15);
  auto res = solv::constrained_weighted_regress(a, b, w, *minv, 1.0, 1e-12, 1e-10);
  // x* = A b for orthonormal A.
  FxVector want = fx::matvec(a, b);
  for (int i = 0; i < n; ++i)
    CHECK(std::fabs(N::to_double(N::sub(res.x[i], want[i]), ctx)) <= 1e-8);
}

TEST_CASE("constrained regress: weight range validation") {
  PrecisionContext ctx;
  FxMatrix a = random_matrix(6, 2, 55, ctx);
  FxVector b = random_vector(2, 57, ctx);
  FxVector w(6, ctx);
  for (auto& v : w.x) v = fx::i128(1) << (ctx.frac_bits - 1);  // 0.5 < 1
  auto minv = im::make_dense_gram_inverse<N>(a, w, 1e-12);
  CHECK_THROWS_AS(solv::constrained_weighted_regress(a, b, w, *minv, 1.0, 1e-12, 1e-8),
                  ParameterError);
}

TEST_CASE("constrained regress: three error contracts against the rational oracle") {
  PrecisionContext ctx;
  const int n = 30, d = 6;
  FxMatrix a = random_matrix(n, d, 61, ctx);
  FxVector b = random_vector(d, 63, ctx);
  CounterRng rng(67);
  FxVector w(n, ctx);
  for (auto& v : w.x) v = fx::raw_from_double<N>(1.0 + 9.0 * rng.next_double(), ctx);

  // Preconditioner: exact inverse of A^T W^{-1} A (lambda = 1).
  FxVector winv(n, ctx);
  auto one = fx::i128(1) << ctx.frac_bits;
  for (int i = 0; i < n; ++i) winv[i] = N::div_round(one, w[i], ctx);
  auto minv = im::make_dense_gram_inverse<N>(a, winv, 1e-16);

  const double eps = 1e-8;
  auto res = solv::constrained_weighted_regress(a, b, w, *minv, 1.0, 1e-14, eps);

  // Exact x* = W^{-1} A (A^T W^{-1} A)^{-1} b.
  rat::RatMatrix aq = rat::from_fx(a);
  rat::RatVector wq = rat::from_fx(w);
  rat::RatVector bq = rat::from_fx(b);
  rat::RatMatrix g(d, d);
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) {
      mpq_class s = 0;
      for (int i = 0; i < n; ++i) s += aq(i, j) * aq(i, k) / wq[i];
      g(j, k) = s;
    }
  rat::RatVector z = rat::exact_solve(g, bq);
  rat::RatVector xs(n);
  for (int i = 0; i < n; ++i) {
    mpq_class s = 0;
    for (int j = 0; j < d; ++j) s += aq(i, j) * z[j];
    xs[i] = s / wq[i];
  }

  // Contracts: ||x - x*||_2 <= eps ||x*||_2; ||x||_W <= (1+eps)||x*||_W;
  // ||pi_A (x - x*)||_2 <= eps ||pi_A x*||_2.
  rat::RatVector diff(n);
  mpq_class d2 = 0, x2 = 0, xw = 0, dw = 0;
  for (int i = 0; i < n; ++i) {
    diff[i] = fx::raw_to_mpq<N>(res.x[i], ctx) - xs[i];
    d2 += diff[i] * diff[i];
    x2 += xs[i] * xs[i];
    xw += wq[i] * xs[i] * xs[i];
    mpq_class xi = fx::raw_to_mpq<N>(res.x[i], ctx);
    dw += wq[i] * xi * xi;
  }
  CHECK(std::sqrt(d2.get_d()) <= eps * std::sqrt(x2.get_d()));
  CHECK(std::sqrt(dw.get_d()) <= (1 + eps) * std::sqrt(xw.get_d()));

  rat::RatMatrix gram = rat::matmul(rat::transpose(aq), aq);
  rat::RatMatrix graminv = rat::exact_inverse(gram);
  auto project = [&](const rat::RatVector& v) {
    rat::RatVector t = rat::matvec_t(aq, v);
    rat::RatVector u = rat::matvec(graminv, t);
    return rat::matvec(aq, u);
  };
  rat::RatVector pd = project(diff), px = project(xs);
  CHECK(std::sqrt(rat::dot(pd, pd).get_d()) <= eps * std::sqrt(rat::dot(px, px).get_d()));
}

TEST_CASE("projection_apply fixes range and kills complement") {
  PrecisionContext ctx;
  const int n = 14, d = 4;
  FxMatrix a = random_matrix(n, d, 71, ctx);
  CounterRng rng(73);
  FxVector w(n, ctx);
  for (auto& v : w.x) v = fx::raw_from_double<N>(1.0 + rng.next_double(), ctx);
  auto minv = im::make_dense_gram_inverse<N>(a, w, 1e-16);

  // g = sqrt(W) A y lies in the range: u should return it.
  FxVector y = random_vector(d, 75, ctx);
  FxVector ay = fx::matvec(a, y);
  FxVector g(n, ctx);
  for (int i = 0; i < n; ++i) {
    auto sw = solv::sqrt_value<N>(w[i], ctx);
    g[i] = N::mul_round(sw, ay[i], ctx);
  }
  auto u = solv::projection_apply(a, w, g, *minv, 40, 1.0, 1e-14);
  for (int i = 0; i < n; ++i)
    CHECK(std::fabs(N::to_double(N::sub(u[i], g[i]), ctx)) <= 1e-9);

  // Projection never expands: ||u|| <= (1 + small) ||g||.
  FxVector gr = random_vector(n, 77, ctx);
  auto u2 = solv::projection_apply(a, w, gr, *minv, 40, 1.0, 1e-14);
  CHECK(fx::norm2_double(u2) <= 1.001 * fx::norm2_double(gr));
}

TEST_CASE("projection_apply matches the corollary bound against the oracle") {
  PrecisionContext ctx;
  const int n = 12, d = 3;
  FxMatrix a = random_matrix(n, d, 81, ctx);
  CounterRng rng(83);
  FxVector w(n, ctx);
  for (auto& v : w.x) v = fx::raw_from_double<N>(1.0 + rng.next_double(), ctx);
  FxVector g = random_vector(n, 85, ctx);
  auto minv = im::make_dense_gram_inverse<N>(a, w, 1e-16);
  const long k = 30;
  const double lambda = 1.0, eps_op = 1e-10;
  auto u = solv::projection_apply(a, w, g, *minv, k, lambda, eps_op);

  // Oracle: sqrt(W) A (A^T W A)^{-1} A^T sqrt(W) g over rationals (sqrt(W)
  // taken as the fixed-point square root to match the implementation's grid).
  rat::RatMatrix aq = rat::from_fx(a);
  rat::RatVector swq(n);
  for (int i = 0; i < n; ++i) swq[i] = fx::raw_to_mpq<N>(solv::sqrt_value<N>(w[i], ctx), ctx);
  rat::RatMatrix swa(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) swa(i, j) = swq[i] * aq(i, j);
  rat::RatMatrix gm = rat::matmul(rat::transpose(swa), swa);
  rat::RatVector rhs(d, mpq_class(0));
  for (int j = 0; j < d; ++j) {
    mpq_class s = 0;
    for (int i = 0; i < n; ++i) s += swa(i, j) * fx::raw_to_mpq<N>(g[i], ctx);
    rhs[j] = s;
  }
  rat::RatVector sol = rat::exact_solve(gm, rhs);
  double err2 = 0, u2 = 0;
  for (int i = 0; i < n; ++i) {
    mpq_class ui = 0;
    for (int j = 0; j < d; ++j) ui += swa(i, j) * sol[j];
    double dd = N::to_double(u[i], ctx) - ui.get_d();
    err2 += dd * dd;
    u2 += ui.get_d() * ui.get_d();
  }
  double bound = lambda * std::pow(1.0 - 1.0 / lambda + eps_op, k) * std::sqrt(u2) + 1e-9;
  CHECK(std::sqrt(err2) <= bound);
}
