#include <algorithm>
#include <cmath>

#include "bitopt/lp.hpp"
#include "bitopt/numerics.hpp"
#include "bitopt/solvers.hpp"
#include "bitopt/sketch.hpp"

namespace bitopt::lp {

using N = fx::Narrow;

namespace {

struct Margins2 {
  std::vector<InvariantRecord> recs;
  int idx(const std::string& name, double threshold) {
    recs.push_back({name, threshold, threshold});
    return static_cast<int>(recs.size()) - 1;
  }
  void observe(int i, double measured) {
    recs[i].margin = std::min(recs[i].margin, recs[i].threshold - measured);
  }
};

mpq_class qround_scalar(const mpq_class& v, const mpq_class& q, double lq) {
  if (v == 0) return 0;
  mpq_class av = abs(v);
  long k0 = std::lround(std::log(av.get_d()) / lq);
  long best_k = k0;
  mpq_class best = num::pow_q(q, k0);
  mpq_class best_err = abs(best - av);
  for (long dk : {-1L, 1L, -2L, 2L}) {
    mpq_class p = num::pow_q(q, k0 + dk);
    mpq_class err = abs(p - av);
    if (err < best_err || (err == best_err && k0 + dk < best_k)) {
      best_err = err;
      best = p;
      best_k = k0 + dk;
    }
  }
  return v < 0 ? mpq_class(-best) : best;
}

fx::i128 mpq_to_grid(const mpq_class& v, int grid_bits, const PrecisionContext& ctx) {
  PrecisionContext g{grid_bits, ctx.max_magnitude_bits};
  fx::i128 raw = fx::raw_from_mpq<N>(v, g);
  return raw << (ctx.frac_bits - grid_bits);
}

}  // namespace

IpmResult inverse_free_ipm(const FxMatrix& a_in, const FxVector& x0, const FxVector& s0,
                           fx::i128 t0, fx::i128 t_final, const InverseFreeOptions& opt) {
  const PrecisionContext ctx = a_in.ctx;
  const int n_start = a_in.rows;
  const double h = 0.1;  // Lemma step size; Algorithm 6's printed -0.5 is the l2 variant's
  const double beta = 1e4;
  const double tfac = 1.0 - 1.0 / (beta * std::sqrt(static_cast<double>(n_start)));
  const mpq_class tfac_q(tfac);
  const mpq_class q_xs(101, 100), q_mu(1001, 1000);
  const double lq_xs = std::log(q_xs.get_d()), lq_mu = std::log(q_mu.get_d());
  const mpq_class h_q(1, 10);

  const int round_grid =
      std::min<int>(ctx.frac_bits, static_cast<int>(std::ceil(opt.c_round * n_start * 1.4426950408889634)));
  const double zero_thresh =
      std::max(std::exp(-opt.c_zero * n_start), std::ldexp(1.0, -ctx.frac_bits));

  // Live copies; rows can be dropped when x_i hits the zero threshold.
  rat::RatMatrix a = rat::from_fx(a_in);
  std::vector<int> alive(n_start);
  for (int i = 0; i < n_start; ++i) alive[i] = i;
  rat::RatVector x = rat::from_fx(x0), s = rat::from_fx(s0);
  mpq_class t = fx::raw_to_mpq<N>(t0, ctx);
  const mpq_class tf = fx::raw_to_mpq<N>(t_final, ctx);

  Margins2 margins;
  const int inv_atdx = margins.idx("a_t_dx_exact_zero", 0.0);
  const int inv_cent = margins.idx("centrality_le_0.01", 0.01);
  const int inv_dx = margins.idx("step_x_le_0.15h", 0.15 * h);
  const int inv_ds = margins.idx("step_s_le_0.15h", 0.15 * h);
  const int inv_pos = margins.idx("positivity", 0.0);

  IpmResult res;
  long iter = 0;
  long recenter_left = 2048;
  const long stride = std::max(1L, opt.trace_stride);

  while (true) {
    int n = a.rows, d = a.cols;
    // Centrality at the current point.
    mpq_class cent2 = 0;
    for (int i = 0; i < n; ++i) {
      mpq_class rr = (x[i] * s[i] - t) / t;
      cent2 += rr * rr;
    }
    double cent = std::sqrt(cent2.get_d());
    bool recentering = recenter_left > 0 && cent > 0.008;
    if (!recentering) recenter_left = 0;
    if (!recentering && t < tf) break;
    if (!recentering) {
      margins.observe(inv_cent, cent);
      if (cent > 0.01)
        throw CertifiedFailureError("inverse_free_ipm: centrality invariant breached", iter);
    }
    ++iter;

    // delta_mu = -h (mu - t); qround anchors.
    rat::RatVector dmu(n), xq(n), sq(n), dmuq(n);
    for (int i = 0; i < n; ++i) {
      dmu[i] = -h_q * (x[i] * s[i] - t);
      xq[i] = qround_scalar(x[i], q_xs, lq_xs);
      sq[i] = qround_scalar(s[i], q_xs, lq_xs);
      dmuq[i] = qround_scalar(dmu[i], q_mu, lq_mu);  // zero entries pass through
    }

    // Exact solve of (A^T Xbar Sbar^{-1} A) z = A^T Sbar^{-1} dmu over Q;
    // the common-denominator clearing happens inside the Bareiss elimination.
    rat::RatMatrix m(d, d);
    rat::RatVector rhs(d, mpq_class(0));
    for (int i = 0; i < n; ++i) {
      mpq_class w = xq[i] / sq[i];
      for (int j = 0; j < d; ++j) {
        for (int k = j; k < d; ++k) m(j, k) += w * a(i, j) * a(i, k);
        rhs[j] += a(i, j) * dmuq[i] / sq[i];
      }
    }
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < j; ++k) m(j, k) = m(k, j);
    rat::RatVector z;
    try {
      z = rat::exact_solve(m, rhs);
    } catch (const SingularMatrixError& e) {
      throw NumericFailureError(std::string("inverse_free_ipm: singular weighted normal matrix "
                                            "(bug trap): ") + e.what(), iter);
    }

    // delta_s = A z; delta_x = Sbar^{-1} dmu - Xbar Sbar^{-1} delta_s (exact).
    rat::RatVector dsv = rat::matvec(a, z);
    rat::RatVector dxv(n);
    for (int i = 0; i < n; ++i) dxv[i] = dmuq[i] / sq[i] - xq[i] / sq[i] * dsv[i];

    // A^T delta_x must vanish with exact rational equality.
    rat::RatVector atdx = rat::matvec_t(a, dxv);
    for (int j = 0; j < d; ++j)
      if (atdx[j] != 0) {
        margins.observe(inv_atdx, 1.0);
        throw CertifiedFailureError("inverse_free_ipm: A^T dx != 0 exactly", iter);
      }
    margins.observe(inv_atdx, 0.0);

    // Step norms (relative to the true x, s).
    mpq_class nx2 = 0, ns2 = 0;
    for (int i = 0; i < n; ++i) {
      mpq_class rx = dxv[i] / x[i], rs = dsv[i] / s[i];
      nx2 += rx * rx;
      ns2 += rs * rs;
    }
    if (!recentering) {
      margins.observe(inv_dx, std::sqrt(nx2.get_d()));
      margins.observe(inv_ds, std::sqrt(ns2.get_d()));
    }

    // Round steps to the exp(-c_round n) grid and apply.
    double min_xs = 1e300;
    for (int i = 0; i < n; ++i) {
      fx::i128 dxr = mpq_to_grid(dxv[i], round_grid, ctx);
      fx::i128 dsr = mpq_to_grid(dsv[i], round_grid, ctx);
      x[i] += fx::raw_to_mpq<N>(dxr, ctx);
      s[i] += fx::raw_to_mpq<N>(dsr, ctx);
      min_xs = std::min({min_xs, x[i].get_d(), s[i].get_d()});
    }
    margins.observe(inv_pos, -min_xs);
    if (min_xs <= 0)
      throw CertifiedFailureError("inverse_free_ipm: positivity lost", iter);

    if (!recentering) {
      mpq_class tn = t * tfac_q;
      t = fx::raw_to_mpq<N>(mpq_to_grid(tn, round_grid, ctx), ctx);
    } else {
      --recenter_left;
    }

    // Zero out tiny coordinates and drop their rows.
    std::vector<int> keep;
    for (int i = 0; i < n; ++i)
      if (x[i].get_d() > zero_thresh) keep.push_back(i);
    if (static_cast<int>(keep.size()) < n) {
      rat::RatMatrix a2(static_cast<int>(keep.size()), d);
      rat::RatVector x2(keep.size()), s2(keep.size());
      std::vector<int> alive2(keep.size());
      for (size_t i2 = 0; i2 < keep.size(); ++i2) {
        for (int j = 0; j < d; ++j) a2(static_cast<int>(i2), j) = a(keep[i2], j);
        x2[i2] = x[keep[i2]];
        s2[i2] = s[keep[i2]];
        alive2[i2] = alive[keep[i2]];
      }
      for (int i = 0; i < n; ++i)
        if (std::find(keep.begin(), keep.end(), i) == keep.end())
          res.dropped_rows.push_back(alive[i]);
      a = std::move(a2);
      x = std::move(x2);
      s = std::move(s2);
      alive = std::move(alive2);
    }

    if (opt.trace && iter % stride == 0)
      (*opt.trace) << iter << ',' << t.get_d() << ',' << cent << ",,"
                   << std::sqrt(nx2.get_d()) << ',' << std::sqrt(ns2.get_d()) << ",,\n";
  }

  // Re-inflate to the original indexing; dropped coordinates are exact zeros.
  res.x = FxVector(n_start, ctx);
  res.s = FxVector(n_start, ctx);
  for (size_t i = 0; i < alive.size(); ++i) {
    res.x[alive[i]] = fx::raw_from_mpq<N>(x[i], ctx);
    res.s[alive[i]] = fx::raw_from_mpq<N>(s[i], ctx);
  }
  res.t_final = fx::raw_from_mpq<N>(t, ctx);
  res.audit.iterations = iter;
  res.audit.invariants = margins.recs;
  // Feasibility drift of the surviving coordinates.
  {
    rat::RatVector atx = rat::matvec_t(a, x);
    rat::RatMatrix a0 = rat::from_fx(FxMatrix(a_in));
    rat::RatVector x0q = rat::from_fx(x0);
    rat::RatVector atx0 = rat::matvec_t(a0, x0q);
    mpq_class s2 = 0;
    for (int j = 0; j < a.cols; ++j) {
      mpq_class dd = atx[j] - atx0[j];
      s2 += dd * dd;
    }
    res.audit.feasibility_drift = std::sqrt(s2.get_d());
  }
  return res;
}

// --- two-phase driver ---------------------------------------------------------

namespace {

IpmResult dispatch(Method m, const FxMatrix& a, const FxVector& x0, const FxVector& s0,
                   fx::i128 t0, fx::i128 t_final, double eps2, std::ostream* trace) {
  IpmOptions opt;
  opt.eps2 = eps2;
  opt.trace = trace;
  opt.trace_stride = 64;
  switch (m) {
    case Method::kRobust: return robust_ipm(a, x0, s0, t0, t_final, opt);
    case Method::kL2: return l2_ipm_core(a, x0, s0, t0, t_final, opt);
    case Method::kExact: {
      InverseFreeOptions io;
      io.trace = trace;
      io.trace_stride = 64;
      return inverse_free_ipm(a, x0, s0, t0, t_final, io);
    }
  }
  throw ParameterError("unknown method");
}

}  // namespace

LpSolveResult lp_solve(const LPInstance& lp, double eps1, double eps2, Method method,
                       std::ostream* trace, std::uint64_t seed) {
  lp.validate();
  const auto& ctx = lp.a.ctx;
  const int n = lp.n();
  const double eps = 1.0 / (100.0 * std::sqrt(static_cast<double>(n)));
  ModifiedLP mlp = build_modified_lp(lp, eps, seed);

  double cinf = 0;
  for (int i = 0; i < n; ++i) cinf = std::max(cinf, std::fabs(N::to_double(lp.c[i], ctx)));
  if (cinf == 0) cinf = 1;
  const double cinf_r = cinf * lp.r_outer;

  LpSolveResult out;
  ExtractedPoint ep;
  double phase1_tf = cinf_r;
  IpmResult p1;
  int attempt = 0;
  for (;; ++attempt) {
    if (attempt >= 3)
      throw PhaseTransitionError("lp_solve: phase-1 window violated after 3 retries");
    p1 = dispatch(method, mlp.abar, mlp.x0bar, mlp.s0bar, mlp.t0,
                  fx::raw_from_double<N>(phase1_tf, ctx), eps2, trace);
    try {
      ep = extract_original_point(mlp, p1.x, p1.s, cinf_r, eps);
      break;
    } catch (const PhaseTransitionError&) {
      phase1_tf /= 2;  // tighten and retry
    }
  }
  out.phase1 = p1.audit;
  out.phase1_retries = attempt;

  fx::i128 t_mid = fx::raw_from_double<N>(cinf_r, ctx);
  fx::i128 t_fin = fx::raw_from_double<N>(eps1 / (2.0 * n), ctx);
  IpmResult p2 = dispatch(method, lp.a, ep.x, ep.s, t_mid, t_fin, eps2, trace);
  out.phase2 = p2.audit;
  out.x = p2.x;

  // Objective, feasibility, and the dual certificate.
  rat::RatMatrix aq = rat::from_fx(lp.a);
  rat::RatVector xq = rat::from_fx(out.x);
  rat::RatVector cq = rat::from_fx(lp.c);
  rat::RatVector bq = rat::from_fx(lp.b);
  out.objective = rat::dot(cq, xq).get_d();
  rat::RatVector atx = rat::matvec_t(aq, xq);
  mpq_class f2 = 0;
  for (int j = 0; j < lp.d(); ++j) {
    mpq_class dd = atx[j] - bq[j];
    f2 += dd * dd;
  }
  out.feasibility = std::sqrt(f2.get_d());
  // y from least squares on A y = c - s.
  FxVector cs(n, ctx);
  for (int i = 0; i < n; ++i) cs[i] = N::sub(lp.c[i], p2.s[i]);
  try {
    auto reg = solv::solve_regression(lp.a, cs, 1e-10, seed + 17);
    rat::RatVector yq = rat::from_fx(reg.x);
    out.duality_gap = out.objective - rat::dot(bq, yq).get_d();
  } catch (const Error&) {
    out.duality_gap = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

// --- exact vertex-enumeration oracle --------------------------------------------

VertexOpt lp_vertex_opt(const rat::RatMatrix& a, const rat::RatVector& b,
                        const rat::RatVector& c) {
  const int n = a.rows, d = a.cols;
  VertexOpt best;
  std::vector<int> pick(d);
  for (int i = 0; i < d; ++i) pick[i] = i;
  auto advance = [&]() {
    int i = d - 1;
    while (i >= 0 && pick[i] == n - d + i) --i;
    if (i < 0) return false;
    ++pick[i];
    for (int j = i + 1; j < d; ++j) pick[j] = pick[j - 1] + 1;
    return true;
  };
  do {
    rat::RatMatrix basis(d, d);
    for (int r = 0; r < d; ++r)
      for (int jc = 0; jc < d; ++jc) basis(r, jc) = a(pick[r], jc);
    rat::RatVector xb;
    try {
      // Solve basis^T x_B = b.
      xb = rat::exact_solve(rat::transpose(basis), b);
    } catch (const SingularMatrixError&) {
      continue;
    }
    bool ok = true;
    for (const auto& v : xb)
      if (v < 0) {
        ok = false;
        break;
      }
    if (!ok) continue;
    mpq_class obj = 0;
    for (int r = 0; r < d; ++r) obj += c[pick[r]] * xb[r];
    if (!best.feasible || obj < best.objective) {
      best.feasible = true;
      best.objective = obj;
      best.x.assign(n, mpq_class(0));
      for (int r = 0; r < d; ++r) best.x[pick[r]] = xb[r];
    }
  } while (advance());
  return best;
}

VertexOpt lp_vertex_opt(const LPInstance& lp) {
  return lp_vertex_opt(rat::from_fx(lp.a), rat::from_fx(lp.b), rat::from_fx(lp.c));
}

}  // namespace bitopt::lp
