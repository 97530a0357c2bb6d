#include "bitopt/lp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bitopt/invmaint.hpp"
#include "bitopt/numerics.hpp"
#include "bitopt/projmaint.hpp"
#include "bitopt/sketch.hpp"

namespace bitopt::lp {

using N = fx::Narrow;

namespace {

constexpr double kLogWindow = 1.0 / 48.0;  // anchor refresh for log x, log s

double to_d(fx::i128 v, const PrecisionContext& c) { return N::to_double(v, c); }

fx::i128 from_d(double v, const PrecisionContext& c) { return fx::raw_from_double<N>(v, c); }

struct Margins {
  // name -> (threshold, worst measured); margin = threshold - worst.
  std::vector<InvariantRecord> recs;
  int idx(const std::string& name, double threshold) {
    recs.push_back({name, threshold, threshold});
    return static_cast<int>(recs.size()) - 1;
  }
  void observe(int i, double measured) {
    recs[i].margin = std::min(recs[i].margin, recs[i].threshold - measured);
  }
};

double exact_feas_drift(const FxMatrix& a, const FxVector& x, const FxVector& x0) {
  rat::RatMatrix aq = rat::from_fx(a);
  rat::RatVector diff(a.rows);
  for (int i = 0; i < a.rows; ++i)
    diff[i] = fx::raw_to_mpq<N>(x[i], x.ctx) - fx::raw_to_mpq<N>(x0[i], x0.ctx);
  rat::RatVector atd = rat::matvec_t(aq, diff);
  mpq_class s = rat::dot(atd, atd);
  return std::sqrt(s.get_d());
}

}  // namespace

void LPInstance::validate() const {
  if (a.rows <= a.cols) throw ParameterError("lp: need n > d");
  if (static_cast<int>(b.size()) != a.cols || static_cast<int>(c.size()) != a.rows)
    throw ParameterError("lp: dimension mismatch");
  if (!(r_inner > 0) || !(r_outer >= r_inner)) throw ParameterError("lp: bad radii");
}

Method method_from_string(const std::string& name) {
  if (name == "robust") return Method::kRobust;
  if (name == "l2") return Method::kL2;
  if (name == "exact") return Method::kExact;
  throw InputError("unknown method: " + name);
}

std::string to_string(Method m) {
  switch (m) {
    case Method::kRobust: return "robust";
    case Method::kL2: return "l2";
    case Method::kExact: return "exact";
  }
  return "?";
}

double phi_potential(const std::vector<double>& r, double lambda) {
  double s = 0;
  for (double v : r) {
    double u = lambda * v;
    if (std::fabs(u) > 700) throw NumericFailureError("phi: overflow guard tripped");
    s += std::cosh(u);
  }
  return s;
}

std::vector<double> phi_gradient(const std::vector<double>& r, double lambda) {
  std::vector<double> g(r.size());
  for (size_t i = 0; i < r.size(); ++i) {
    double u = lambda * r[i];
    if (std::fabs(u) > 700) throw NumericFailureError("phi: overflow guard tripped");
    g[i] = lambda * std::sinh(u);
  }
  return g;
}

// --- modified LP --------------------------------------------------------------

ModifiedLP build_modified_lp(const LPInstance& lp, double eps, std::uint64_t seed) {
  lp.validate();
  if (!(eps > 0 && eps <= 0.5)) throw ParameterError("build_modified_lp: eps in (0, 0.5]");
  const auto& ctx = lp.a.ctx;
  const int n = lp.n(), d = lp.d();
  const double R = lp.r_outer, r = lp.r_inner;
  double cinf = 0;
  for (int i = 0; i < n; ++i) cinf = std::max(cinf, std::fabs(to_d(lp.c[i], ctx)));
  if (cinf == 0) cinf = 1;
  const double rbar = 5.0 / eps * R;
  const double t0d = std::ldexp(1.0, 16) * std::pow(eps, -3) * n * n * (R / r) * cinf * R;

  ModifiedLP m;
  m.n_orig = n;
  m.rbar = rbar;
  m.t0 = from_d(t0d, ctx);

  // x_c^+ = t / (c + t/rbar)
  FxVector xplus(n, ctx);
  fx::i128 t_over_rbar = N::div_round(m.t0, from_d(rbar, ctx), ctx);
  for (int i = 0; i < n; ++i)
    xplus[i] = N::div_round(m.t0, N::add(lp.c[i], t_over_rbar), ctx);

  // x_c^- = x_c^+ - A (A^T A)^{-1} b, with the inner solve at high accuracy.
  FxVector az(n, ctx);
  {
    auto pre = sketch::spectral_preconditioner(lp.a, 0.5, seed);
    auto inv = im::high_precision_inverse<N>(pre.m, 1e-9 / (d * pre.lambda * 100.0),
                                             im::InverseTarget::kForward);
    im::DenseInverseOperator<N> minv(std::move(inv.z), inv.forward_bound, "mlp-init");
    FxVector ones(n, ctx);
    for (auto& v : ones.x) v = fx::i128(1) << ctx.frac_bits;
    solv::RichardsonConfig cfg(pre.lambda, 1e-6, 4000, 1e-14);
    FxVector z = solv::richardson_normal(lp.a, ones, lp.b, minv, cfg);
    az = fx::matvec(lp.a, z);
  }
  FxVector xminus(n, ctx);
  for (int i = 0; i < n; ++i) {
    xminus[i] = N::sub(xplus[i], az[i]);
    if (xminus[i] <= 0)
      throw NumericFailureError("build_modified_lp: initialization failure, x^- <= 0 at index " +
                                std::to_string(i), i);
  }

  // abar = [[A, 1], [-A, 0], [0, 1]]
  m.abar = FxMatrix(2 * n + 1, d + 1, ctx);
  const fx::i128 one = fx::i128(1) << ctx.frac_bits;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      m.abar(i, j) = lp.a(i, j);
      m.abar(n + i, j) = N::neg(lp.a(i, j));
    }
    m.abar(i, d) = one;
  }
  m.abar(2 * n, d) = one;

  // bbar = (b, sum x^+ + rbar)
  m.bbar = FxVector(d + 1, ctx);
  for (int j = 0; j < d; ++j) m.bbar[j] = lp.b[j];
  fx::i128 acc = from_d(rbar, ctx);
  for (int i = 0; i < n; ++i) acc = N::add(acc, xplus[i]);
  m.bbar[d] = acc;

  // cbar = (c, t/x^-, 0)
  m.cbar = FxVector(2 * n + 1, ctx);
  for (int i = 0; i < n; ++i) {
    m.cbar[i] = lp.c[i];
    m.cbar[n + i] = N::div_round(m.t0, xminus[i], ctx);
  }

  m.x0bar = FxVector(2 * n + 1, ctx);
  for (int i = 0; i < n; ++i) {
    m.x0bar[i] = xplus[i];
    m.x0bar[n + i] = xminus[i];
  }
  m.x0bar[2 * n] = from_d(rbar, ctx);
  m.s0bar = FxVector(2 * n + 1, ctx);
  for (int i = 0; i < 2 * n + 1; ++i) m.s0bar[i] = N::div_round(m.t0, m.x0bar[i], ctx);
  return m;
}

ExtractedPoint extract_original_point(const ModifiedLP& mlp, const FxVector& xbar,
                                      const FxVector& sbar, double cinf_r, double eps) {
  const auto& ctx = xbar.ctx;
  const int n = mlp.n_orig;
  // Componentwise centrality window 5/6 c_inf R <= x_i s_i <= 7/6 c_inf R.
  for (int i = 0; i < 2 * n + 1; ++i) {
    double prod = to_d(xbar[i], ctx) * to_d(sbar[i], ctx);
    if (prod < 5.0 / 6.0 * cinf_r || prod > 7.0 / 6.0 * cinf_r)
      throw PhaseTransitionError("extract: centrality window violated at index " +
                                 std::to_string(i) + " (x s = " + std::to_string(prod) + ")");
  }
  ExtractedPoint out;
  out.x = FxVector(n, ctx);
  out.s = FxVector(n, ctx);
  const fx::i128 stheta = sbar[2 * n];
  for (int i = 0; i < n; ++i) {
    out.x[i] = N::sub(xbar[i], xbar[n + i]);
    out.s[i] = N::sub(sbar[i], stheta);
    if (out.x[i] <= 0 || out.s[i] <= 0)
      throw PhaseTransitionError("extract: positivity lost at index " + std::to_string(i));
    double xm_ratio = to_d(xbar[n + i], ctx) / to_d(xbar[i], ctx);
    double st_ratio = to_d(stheta, ctx) / to_d(sbar[i], ctx);
    out.worst_xminus_ratio = std::max(out.worst_xminus_ratio, xm_ratio);
    out.worst_stheta_ratio = std::max(out.worst_stheta_ratio, st_ratio);
  }
  // Report (not fail) when the eps-dominance of Lemma init-feasible is loose.
  (void)eps;
  return out;
}

// --- robust IPM ----------------------------------------------------------------

IpmResult robust_ipm(const FxMatrix& a, const FxVector& x0, const FxVector& s0, fx::i128 t0,
                     fx::i128 t_final, const IpmOptions& opt) {
  const auto& ctx = a.ctx;
  const int n = a.rows;
  const double lambda = 16.0 * std::log(40.0 * n);
  const double h = 1.0 / (128.0 * lambda * std::sqrt(static_cast<double>(n)));
  const fx::i128 one_plus_h = from_d(1.0 + h, ctx);

  FxVector x = x0, s = s0;
  fx::i128 t = t0;
  double td = to_d(t, ctx);

  // r0 = round((x s - t)/t, 1/n)
  FxVector rbar(n, ctx);
  {
    int grid = num::grid_bits_for(1.0 / n);
    for (int i = 0; i < n; ++i) {
      fx::i128 mu = N::mul_round(x[i], s[i], ctx);
      fx::i128 r = N::div_round(N::sub(mu, t), t, ctx);
      rbar[i] = N::round_to_grid(r, grid, ctx);
    }
  }
  FxVector xbar = x, sbar = s;

  auto grad_fn = [lambda](const fx::i128& r, const PrecisionContext& c) {
    double u = lambda * N::to_double(r, c);
    if (std::fabs(u) > 700) throw NumericFailureError("phi gradient overflow");
    return fx::raw_from_double<N>(lambda * std::sinh(u), c);
  };
  // Paper's eps formula collapses below the grain at desk scale; floor it.
  const double eps_pds = std::max(1e-12, opt.eps2 * 1e-6);
  im::Pds<N> pds(a, x, s, rbar, grad_fn, std::min(2.0 / 3.0, 2.0 / 3.0), eps_pds);

  // Anchor-derived caches.
  std::vector<double> xbd(n), sbd(n), rbd(n), gphi(n);
  std::vector<fx::i128> u1(n), v(n), rlo(n), rhi(n), xlo(n), xhi(n), slo(n), shi(n);
  double gnorm = 0;
  fx::i128 inv_gscale = 0;
  FxVector wdir(n, ctx);
  const double elo = std::exp(-kLogWindow), ehi = std::exp(kLogWindow);
  const double rwin = 1.0 / (48.0 * lambda);

  auto refresh_coord = [&](int i) {
    xbd[i] = to_d(xbar[i], ctx);
    sbd[i] = to_d(sbar[i], ctx);
    rbd[i] = to_d(rbar[i], ctx);
    double u = lambda * rbd[i];
    gphi[i] = lambda * std::sinh(u);
    fx::i128 g = from_d(gphi[i], ctx);
    u1[i] = N::div_round(g, sbar[i], ctx);
    v[i] = N::div_round(xbar[i], sbar[i], ctx);
    rlo[i] = from_d(1.0 + rbd[i] - rwin, ctx);
    rhi[i] = from_d(1.0 + rbd[i] + rwin, ctx);
    xlo[i] = from_d(xbd[i] * elo, ctx);
    xhi[i] = from_d(xbd[i] * ehi, ctx);
    slo[i] = from_d(sbd[i] * elo, ctx);
    shi[i] = from_d(sbd[i] * ehi, ctx);
  };
  auto refresh_gnorm_and_dir = [&]() {
    double s2 = 0;
    for (int i = 0; i < n; ++i) s2 += gphi[i] * gphi[i];
    gnorm = std::sqrt(s2);
    if (gnorm > 1e-30) {
      inv_gscale = from_d(1.0 / (32.0 * lambda * gnorm), ctx);
      wdir = pds.query();
    }
  };
  for (int i = 0; i < n; ++i) refresh_coord(i);
  refresh_gnorm_and_dir();

  Margins margins;
  const int inv_phi = margins.idx("phi_le_16n", 16.0 * n);
  const int inv_dx = margins.idx("step_x_le_1_over_16lambda", 1.0 / (16.0 * lambda));
  const int inv_ds = margins.idx("step_s_le_1_over_16lambda", 1.0 / (16.0 * lambda));
  const int inv_logx = margins.idx("log_step_le_1_over_8lambda", 1.0 / (8.0 * lambda));
  const int inv_pos = margins.idx("positivity", 0.0);  // margin = min(x, s); observe(-min)
  const int inv_feas = margins.idx("feas_drift_le_eps2", opt.eps2);

  std::vector<double> xd(n), sd(n);
  for (int i = 0; i < n; ++i) {
    xd[i] = to_d(x[i], ctx);
    sd[i] = to_d(s[i], ctx);
  }
  std::vector<double> atx0(a.cols, 0.0);
  {
    num::LMat al = num::to_lmat(a);
    for (int j = 0; j < a.cols; ++j)
      for (int i = 0; i < n; ++i) atx0[j] += al(i, j) * xd[i];
  }
  num::LMat al = num::to_lmat(a);

  IpmResult res;
  long iter = 0;
  std::vector<int> sset;
  std::vector<fx::i128> sx, ss, sr;
  const long stride = std::max(1L, opt.trace_stride);

  // Recentering preamble: centering steps at fixed t until phi <= 8n.
  long recenter_left = 512;

  while (true) {
    bool recentering = false;
    if (recenter_left > 0) {
      double phi = 0;
      for (int i = 0; i < n; ++i) {
        double rr = (xd[i] * sd[i] - td) / td;
        phi += std::cosh(lambda * rr);
      }
      if (phi > 8.0 * n) recentering = true;
      else recenter_left = 0;
    }
    if (!recentering && t < t_final) break;

    ++iter;
    if (iter > 400000000L) throw NumericFailureError("robust_ipm: iteration cap", iter);

    double dx_norm2 = 0, ds_norm2 = 0, logx2 = 0, logs2 = 0;
    if (gnorm > 1e-30) {
      fx::i128 cstep = N::mul_round(t, inv_gscale, ctx);
      for (int i = 0; i < n; ++i) {
        fx::i128 dsi = N::neg(N::mul_round(cstep, wdir[i], ctx));
        fx::i128 dxi = N::sub(N::neg(N::mul_round(cstep, u1[i], ctx)), N::mul_round(v[i], dsi, ctx));
        x[i] = N::add(x[i], dxi);
        s[i] = N::add(s[i], dsi);
        double dxd = to_d(dxi, ctx), dsd = to_d(dsi, ctx);
        double ux = dxd / xbd[i], us = dsd / sbd[i];
        dx_norm2 += ux * ux;
        ds_norm2 += us * us;
        double ax = dxd / xd[i], as = dsd / sd[i];
        // |log(1+u)| <= |u|/(1-|u|) for |u| < 1
        double bx = std::fabs(ax) / std::max(1e-9, 1.0 - std::fabs(ax));
        double bs = std::fabs(as) / std::max(1e-9, 1.0 - std::fabs(as));
        logx2 += bx * bx;
        logs2 += bs * bs;
        xd[i] += dxd;
        sd[i] += dsd;
      }
    }
    if (!recentering) {
      t = N::div_round(t, one_plus_h, ctx);
      td = to_d(t, ctx);
    } else {
      --recenter_left;
    }

    // Audits (conservative upper bounds; exact recompute on demand). The
    // recentering preamble exists to reach the invariant region, so it is not
    // scored against the invariants.
    double phi_quad = 0, phi_tail = 0;
    double min_xs = 1e300;
    for (int i = 0; i < n; ++i) {
      double rr = (xd[i] * sd[i] - td) / td;
      double u = lambda * rr;
      if (std::fabs(u) <= 1.0)
        phi_quad += u * u;
      else
        phi_tail += std::cosh(u) - 1.0;
      min_xs = std::min(min_xs, std::min(xd[i], sd[i]));
    }
    double phi_upper = n + 0.5431 * phi_quad + phi_tail;
    if (!recentering) {
      margins.observe(inv_phi, phi_upper);
      margins.observe(inv_dx, std::sqrt(dx_norm2));
      margins.observe(inv_ds, std::sqrt(ds_norm2));
      margins.observe(inv_logx, std::sqrt(std::max(logx2, logs2)));
      margins.observe(inv_pos, -min_xs);
    }
    if (min_xs <= 0)
      throw CertifiedFailureError("robust_ipm: positivity lost at iteration " +
                                  std::to_string(iter), iter);
    if (!recentering && phi_upper > 16.0 * n) {
      // Exact check before declaring failure.
      std::vector<double> rr(n);
      for (int i = 0; i < n; ++i) rr[i] = (xd[i] * sd[i] - td) / td;
      double phi = phi_potential(rr, lambda);
      if (phi > 16.0 * n)
        throw CertifiedFailureError("robust_ipm: phi invariant breached (" + std::to_string(phi) +
                                    " > 16n) at iteration " + std::to_string(iter), iter);
    }

    // Lazy anchor refresh set.
    sset.clear();
    sx.clear();
    ss.clear();
    sr.clear();
    for (int i = 0; i < n; ++i) {
      fx::i128 mu = N::mul_round(x[i], s[i], ctx);
      bool out_r = mu < N::mul_round(t, rlo[i], ctx) || mu > N::mul_round(t, rhi[i], ctx);
      bool out_x = x[i] < xlo[i] || x[i] > xhi[i];
      bool out_s = s[i] < slo[i] || s[i] > shi[i];
      if (out_r || out_x || out_s) {
        sset.push_back(i);
        sx.push_back(x[i]);
        ss.push_back(s[i]);
        sr.push_back(N::div_round(N::sub(mu, t), t, ctx));
      }
    }
    if (!sset.empty()) {
      pds.update(sset, sx, ss, sr);
      for (size_t k = 0; k < sset.size(); ++k) {
        int i = sset[k];
        xbar[i] = sx[k];
        sbar[i] = ss[k];
        rbar[i] = sr[k];
        refresh_coord(i);
      }
      refresh_gnorm_and_dir();
    }

    if (opt.trace && iter % stride == 0) {
      double cent = 0;
      for (int i = 0; i < n; ++i) {
        double rr = (xd[i] * sd[i] - td) / td;
        cent += rr * rr;
      }
      double feas = 0;
      for (int j = 0; j < a.cols; ++j) {
        double acc = -atx0[j];
        for (int i = 0; i < n; ++i) acc += al(i, j) * xd[i];
        feas += acc * acc;
      }
      (*opt.trace) << iter << ',' << td << ',' << std::sqrt(cent) << ',' << (n + 0.5431 * phi_quad + phi_tail)
                   << ',' << std::sqrt(dx_norm2) << ',' << std::sqrt(ds_norm2) << ','
                   << std::sqrt(feas) << ',' << pds.tracked_bound() << '\n';
    }
  }

  res.x = x;
  res.s = s;
  res.t_final = t;
  res.audit.iterations = iter;
  res.audit.ds_rebuilds = pds.ledger().rebuilds;
  res.audit.ds_flushes = pds.ledger().k;
  res.audit.ds_tracked_bound = pds.tracked_bound();
  res.audit.feasibility_drift = exact_feas_drift(a, x, x0);
  margins.observe(inv_feas, res.audit.feasibility_drift);
  res.audit.invariants = margins.recs;
  return res;
}

// --- l2 IPM ----------------------------------------------------------------------

IpmResult l2_ipm_core(const FxMatrix& a, const FxVector& x0, const FxVector& s0, fx::i128 t0,
                      fx::i128 t_final, const IpmOptions& opt) {
  const auto& ctx = a.ctx;
  const int n = a.rows, d = a.cols;
  const double hstep = 0.5;
  const double tfac = 1.0 - 1.0 / (1000.0 * std::sqrt(static_cast<double>(n)));
  const fx::i128 tfac_raw = from_d(tfac, ctx);
  const fx::i128 one = fx::i128(1) << ctx.frac_bits;
  const fx::i128 half = one >> 1;

  FxVector x = x0, s = s0;
  fx::i128 t = t0;

  // Weights w = x/s, lazy anchor w_hat, dense structure on w_hat.
  FxVector w(n, ctx), what(n, ctx);
  for (int i = 0; i < n; ++i) w[i] = N::div_round(x[i], s[i], ctx);
  what = w;
  const double eps_ds = std::max(1e-12, opt.eps2 * 1e-6);
  im::Dds<N> ds(a, what, eps_ds);

  Margins margins;
  const int inv_cent = margins.idx("centrality_le_0.1", 0.1);
  const int inv_dx = margins.idx("step_x_le_0.15h", 0.15 * hstep);
  const int inv_ds = margins.idx("step_s_le_0.15h", 0.15 * hstep);
  const int inv_pos = margins.idx("positivity", 0.0);
  const int inv_feas = margins.idx("feas_drift_le_eps2", opt.eps2);

  solv::RichardsonConfig rich_cfg(3.0, 1e-4, 80, 1e-13);
  const long rich_iters = rich_cfg.planned_iters();

  IpmResult res;
  long iter = 0;
  long recenter_left = 256;
  const long stride = std::max(1L, opt.trace_stride);

  while (true) {
    // Centrality (exact fixed-point products, double accumulation).
    double cent2 = 0;
    double td = to_d(t, ctx);
    for (int i = 0; i < n; ++i) {
      double mu = to_d(N::mul_round(x[i], s[i], ctx), ctx);
      double rr = (mu - td) / td;
      cent2 += rr * rr;
    }
    bool recentering = recenter_left > 0 && std::sqrt(cent2) > 0.07;
    if (!recentering) recenter_left = 0;
    if (!recentering && t < t_final) break;
    if (!recentering) {
      margins.observe(inv_cent, std::sqrt(cent2));
      if (cent2 > 0.01)
        throw CertifiedFailureError("l2_ipm: centrality invariant breached", iter);
    }

    ++iter;
    // delta_mu = -0.5 (mu - t)
    FxVector dmu(n, ctx), sinv(n, ctx);
    for (int i = 0; i < n; ++i) {
      fx::i128 mu = N::mul_round(x[i], s[i], ctx);
      dmu[i] = N::neg(N::mul_round(half, N::sub(mu, t), ctx));
      sinv[i] = N::div_round(one, s[i], ctx);
    }
    // rhs = A^T S^{-1} dmu
    FxVector sdmu(n, ctx);
    for (int i = 0; i < n; ++i) sdmu[i] = N::mul_round(sinv[i], dmu[i], ctx);
    FxVector rhs = fx::matvec_t(a, sdmu);

    // Richardson with Mtil^{-1} = (1/2) Zhat, M = 2 A^T What A (lambda = 3).
    FxVector z(d, ctx);
    for (long k = 0; k < rich_iters; ++k) {
      FxVector ax = fx::matvec(a, z);
      for (int i = 0; i < n; ++i) ax[i] = N::mul_round(w[i], ax[i], ctx);
      FxVector g = fx::matvec_t(a, ax);
      for (int j = 0; j < d; ++j) g[j] = N::sub(g[j], rhs[j]);
      FxVector step = ds.query(g);
      for (int j = 0; j < d; ++j) z[j] = N::sub(z[j], N::mul_round(half, step[j], ctx));
    }
    // delta_s = A z ; delta_x = S^{-1} dmu - W delta_s
    FxVector dsv = fx::matvec(a, z);
    double dxn2 = 0, dsn2 = 0, min_xs = 1e300;
    for (int i = 0; i < n; ++i) {
      fx::i128 dxi = N::sub(sdmu[i], N::mul_round(w[i], dsv[i], ctx));
      double rx = to_d(dxi, ctx) / to_d(x[i], ctx);
      double rs = to_d(dsv[i], ctx) / to_d(s[i], ctx);
      dxn2 += rx * rx;
      dsn2 += rs * rs;
      x[i] = N::add(x[i], dxi);
      s[i] = N::add(s[i], dsv[i]);
      min_xs = std::min({min_xs, to_d(x[i], ctx), to_d(s[i], ctx)});
    }
    if (!recentering) {
      margins.observe(inv_dx, std::sqrt(dxn2));
      margins.observe(inv_ds, std::sqrt(dsn2));
      margins.observe(inv_pos, -min_xs);
    }
    if (min_xs <= 0)
      throw CertifiedFailureError("l2_ipm: positivity lost at iteration " + std::to_string(iter),
                                  iter);
    if (!recentering) t = N::mul_round(t, tfac_raw, ctx);
    else --recenter_left;

    // Lazy weight refresh: |w_hat - w| > 0.5 |w|.
    std::vector<int> q;
    std::vector<fx::i128> qv;
    for (int i = 0; i < n; ++i) {
      w[i] = N::div_round(x[i], s[i], ctx);
      fx::i128 diff = N::sub(what[i], w[i]);
      fx::i128 athr = N::mul_round(half, w[i] < 0 ? N::neg(w[i]) : w[i], ctx);
      if ((diff < 0 ? N::neg(diff) : diff) > athr) {
        q.push_back(i);
        qv.push_back(w[i]);
        what[i] = w[i];
      }
    }
    if (!q.empty()) ds.update(q, qv);

    if (opt.trace && iter % stride == 0)
      (*opt.trace) << iter << ',' << to_d(t, ctx) << ',' << std::sqrt(cent2) << ",,"
                   << std::sqrt(dxn2) << ',' << std::sqrt(dsn2) << ",,"
                   << ds.ledger().tracked_bound() << '\n';
  }

  res.x = x;
  res.s = s;
  res.t_final = t;
  res.audit.iterations = iter;
  res.audit.ds_rebuilds = ds.ledger().rebuilds;
  res.audit.ds_flushes = ds.ledger().k;
  res.audit.ds_tracked_bound = ds.ledger().tracked_bound();
  res.audit.feasibility_drift = exact_feas_drift(a, x, x0);
  margins.observe(inv_feas, res.audit.feasibility_drift);
  res.audit.invariants = margins.recs;
  return res;
}

}  // namespace bitopt::lp
