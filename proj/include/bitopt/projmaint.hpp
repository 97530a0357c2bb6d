#pragma once

// Projection maintenance data structure (PDS): keeps an approximate inverse of
// the bordered system [[0, A], [A^T, diag(s/x)]] under staged diagonal updates,
// answering w = A (A^T X S^{-1} A)^{-1} A^T S^{-1} f(r) at the staged values
// without materializing the projection. Internally the ratio s/x is normalized
// by a power-of-two scalar so the bordered system stays centered; the scalar
// is undone exactly on output.

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <vector>

#include "bitopt/invmaint.hpp"

namespace bitopt::im {

template <class B>
class Pds {
 public:
  using Raw = typename B::Raw;
  using EntryFn = std::function<Raw(const Raw&, const PrecisionContext&)>;

  Pds(const fx::Mat<B>& a, const fx::Vec<B>& x, const fx::Vec<B>& s, const fx::Vec<B>& r,
      EntryFn f, double alpha_hat, double eps, long rebuild_every = 4096)
      : a_(a), f_(std::move(f)), alpha_hat_(alpha_hat), rebuild_every_(rebuild_every) {
    ledger_.eps = eps;
    xbar_ = x;
    sbar_ = s;
    rbar_ = r;
    build();
    if (trace_on_) trace_.push_back({"init", ledger_.k, tracked_bound(), nan_()});
    if (!budget_ok()) {
      ledger_.budget_vacuous = true;
      if (trace_on_) trace_.push_back({"budget_vacuous", ledger_.k, tracked_bound(), nan_()});
    }
  }

  // Stage new values on S; flush through SMW when |T| exceeds n^alpha_hat.
  void update(const std::vector<int>& support, const std::vector<Raw>& xu,
              const std::vector<Raw>& su, const std::vector<Raw>& ru) {
    for (size_t i = 0; i < support.size(); ++i) {
      int t = support[i];
      xtil_[t] = B::sub(xu[i], xbar_[t]);
      stil_[t] = B::sub(su[i], sbar_[t]);
      rtil_[t] = B::sub(ru[i], rbar_[t]);
      if (!in_t_[t]) {
        in_t_[t] = 1;
        t_.push_back(t);
      }
    }
    query_cache_valid_ = false;
    double cap = std::pow(static_cast<double>(a_.rows), alpha_hat_);
    if (static_cast<double>(t_.size()) > cap) flush();
    if (trace_on_) trace_.push_back({"stage", ledger_.k, tracked_bound(), nan_()});
  }

  // w at the staged values, true units. Empty T returns the cached base vector.
  fx::Vec<B> query() const {
    if (t_.empty()) {
      if (trace_on_) trace_.push_back({"query", ledger_.k, tracked_bound(), nan_()});
      return wtil_;
    }
    if (query_cache_valid_) return query_cache_;
    const auto& ctx = a_.ctx;
    const int n = a_.rows;
    const int tcount = static_cast<int>(t_.size());

    // Current values on T and the two correction ingredients.
    fx::Vec<B> u_new(n, ctx);  // S_cur^{-1} f(r_cur); differs from base only on T
    for (int i = 0; i < n; ++i) u_new[i] = ubar_[i];
    std::vector<Raw> dv(tcount);          // u_new - u_old on T
    std::vector<Raw> qhat(tcount);        // normalized weight delta on T
    std::vector<int> qsup;                // T-slots with nonzero weight delta
    for (int j = 0; j < tcount; ++j) {
      int t = t_[j];
      Raw xc = B::add(xbar_[t], xtil_[t]);
      Raw sc = B::add(sbar_[t], stil_[t]);
      Raw rc = B::add(rbar_[t], rtil_[t]);
      Raw unew = B::div_round(f_(rc, ctx), sc, ctx);
      dv[j] = B::sub(unew, u_new[t]);
      u_new[t] = unew;
      // qhat = beta * (x_cur/s_cur - xbar/sbar); beta*x/s = 1/ratio.
      Raw w_cur = shift_value(B::div_round(xc, sc, ctx), beta_log2_);
      Raw w_old = shift_value(B::div_round(xbar_[t], sbar_[t], ctx), beta_log2_);
      qhat[j] = B::sub(w_cur, w_old);
      if (!(qhat[j] == Raw(0))) qsup.push_back(j);
    }

    // out_hat = Phat u_new corrected for the weight change, then scaled back.
    fx::Vec<B> acc = phat_apply_sparse(t_, dv);  // Phat * dv
    if (!qsup.empty()) {
      const int m = static_cast<int>(qsup.size());
      // inner = Qhat^{-1} + Phat_{T',T'}
      fx::Mat<B> inner(m, m, ctx);
      auto one = fx::raw_from_mpq<B>(mpq_class(1), ctx);
      for (int i = 0; i < m; ++i) {
        int ti = t_[qsup[i]];
        for (int j = 0; j < m; ++j) {
          int tj = t_[qsup[j]];
          inner(i, j) = phat_entry(ti, tj);
        }
        inner(i, i) = B::add(inner(i, i), B::div_round(one, qhat[qsup[i]], ctx));
      }
      fx::Mat<B> dinv;
      try {
        dinv = high_precision_inverse<B>(inner, ledger_.eps).z;
      } catch (const NumericFailureError&) {
        throw UpdateRejectedError("pds query: inner inverse unreachable");
      }
      // g = D^{-1} (Phat_{:T'}^T u_new)
      std::vector<Raw> proj(m);
      fx::Vec<B> scaled_u(n, ctx);
      for (int i = 0; i < n; ++i) scaled_u[i] = B::mul_round(ratio_[i], u_new[i], ctx);
      for (int i = 0; i < m; ++i) {
        int t = t_[qsup[i]];
        typename fx::AccOf<B>::type a;
        for (int k = 0; k < n; ++k) a.mac(ztil(t, k), scaled_u[k]);
        Raw rowdot = a.finish(ctx);
        proj[i] = B::sub(B::mul_round(ratio_[t], u_new[t], ctx),
                         B::mul_round(ratio_[t], rowdot, ctx));
      }
      std::vector<Raw> g(m, Raw(0));
      for (int i = 0; i < m; ++i) {
        typename fx::AccOf<B>::type a;
        for (int j = 0; j < m; ++j) a.mac(dinv(i, j), proj[j]);
        g[i] = a.finish(ctx);
      }
      std::vector<int> tsel(m);
      for (int i = 0; i < m; ++i) tsel[i] = t_[qsup[i]];
      fx::Vec<B> corr = phat_apply_sparse(tsel, g);
      for (int i = 0; i < n; ++i) acc[i] = B::sub(acc[i], corr[i]);
    }
    fx::Vec<B> out(n, ctx);
    for (int i = 0; i < n; ++i)
      out[i] = B::add(wtil_[i], shift_value(acc[i], beta_log2_));
    if (trace_on_) trace_.push_back({"query", ledger_.k, tracked_bound(), nan_()});
    query_cache_ = out;
    query_cache_valid_ = true;
    return out;
  }

  void force_rebuild() { rebuild("forced"); }

  const ErrorLedger& ledger() const { return ledger_; }
  DsTrace& trace() { return trace_; }
  void enable_trace(bool on) { trace_on_ = on; }
  long pending() const { return static_cast<long>(t_.size()); }
  double tracked_bound() const {
    // Theorem form: 50 kappa^12 (512 k (5 kappa^5)^26 + 2 k (6 kappa^5)^2 + 1) eps.
    long double kap = ledger_.kappa;
    long double k5 = kap * kap * kap * kap * kap;
    long double a5 = 5.0L * k5, b5 = 6.0L * k5;
    long double a26 = 1;
    for (int i = 0; i < 26; ++i) a26 *= a5;
    long double k12 = 1;
    for (int i = 0; i < 12; ++i) k12 *= kap;
    long double b =
        50.0L * k12 * (512.0L * ledger_.k * a26 + 2.0L * ledger_.k * b5 * b5 + 1.0L) * ledger_.eps;
    return static_cast<double>(b);
  }

 private:
  static double nan_() { return std::numeric_limits<double>::quiet_NaN(); }

  bool budget_ok() const {
    long double kap = ledger_.kappa;
    long double k5 = kap * kap * kap * kap * kap;
    long double a5 = 5.0L * k5, b5 = 6.0L * k5;
    long double a26 = 1;
    for (int i = 0; i < 26; ++i) a26 *= a5;
    long double cap = 1.0L / (10.0L * k5 *
                              (512.0L * (ledger_.k + 1) * a26 + 2.0L * ledger_.k * b5 * b5 + 1.0L));
    return ledger_.eps < static_cast<double>(cap);
  }

  Raw shift_value(const Raw& v, int log2_scale) const {
    if (log2_scale == 0) return v;
    mpz_class raw = B::to_mpz_raw(v);
    if (log2_scale > 0) return B::from_mpz_scaled(raw << log2_scale);
    bool neg = raw < 0;
    mpz_class q = fx::Wide::shift_round_even(abs(raw), -log2_scale);
    return B::from_mpz_scaled(neg ? mpz_class(-q) : q);
  }

  const Raw& ztil(int i, int j) const { return z_(a_.cols + i, a_.cols + j); }

  // With M = [[0, A^T],[A, diag(ratio)]], the bottom-right block of M^{-1} is
  // W - W A (A^T W A)^{-1} A^T W for W = diag(ratio)^{-1}, so the projection
  // surrogate is Phat = Dr (Dr^{-1} - Ztil) Dr.
  Raw phat_entry(int i, int j) const {
    const auto& ctx = a_.ctx;
    Raw v = B::mul_round(ratio_[i], B::mul_round(ztil(i, j), ratio_[j], ctx), ctx);
    if (i == j) return B::sub(ratio_[i], v);
    return B::neg(v);
  }

  // Phat * v for v supported on `sup` (values parallel to sup). O(n |sup|).
  fx::Vec<B> phat_apply_sparse(const std::vector<int>& sup, const std::vector<Raw>& vals) const {
    const auto& ctx = a_.ctx;
    const int n = a_.rows;
    fx::Vec<B> y(n, ctx);
    std::vector<Raw> scaled(sup.size());
    for (size_t j = 0; j < sup.size(); ++j)
      scaled[j] = B::mul_round(ratio_[sup[j]], vals[j], ctx);
    for (int i = 0; i < n; ++i) {
      typename fx::AccOf<B>::type acc;
      for (size_t j = 0; j < sup.size(); ++j) acc.mac(ztil(i, sup[j]), scaled[j]);
      y[i] = B::neg(B::mul_round(ratio_[i], acc.finish(ctx), ctx));
    }
    for (size_t j = 0; j < sup.size(); ++j) {
      int t = sup[j];
      y[t] = B::add(y[t], B::mul_round(ratio_[t], vals[j], ctx));
    }
    return y;
  }

  // Full Phat * v, O(n^2); used when (re)building the cached base vector.
  fx::Vec<B> phat_apply_dense(const fx::Vec<B>& v) const {
    const auto& ctx = a_.ctx;
    const int n = a_.rows;
    fx::Vec<B> scaled(n, ctx);
    for (int i = 0; i < n; ++i) scaled[i] = B::mul_round(ratio_[i], v[i], ctx);
    fx::Vec<B> y(n, ctx);
    for (int i = 0; i < n; ++i) {
      typename fx::AccOf<B>::type acc;
      for (int k = 0; k < n; ++k) acc.mac(ztil(i, k), scaled[k]);
      y[i] = B::sub(B::mul_round(ratio_[i], v[i], ctx),
                    B::mul_round(ratio_[i], acc.finish(ctx), ctx));
    }
    return y;
  }

  void build() {
    const auto& ctx = a_.ctx;
    const int n = a_.rows, d = a_.cols;
    // Normalize the ratio s/x by its geometric mean, snapped to a power of two.
    double logsum = 0;
    for (int i = 0; i < n; ++i) {
      double xs = B::to_double(sbar_[i], ctx) / B::to_double(xbar_[i], ctx);
      logsum += std::log2(std::max(1e-300, std::fabs(xs)));
    }
    beta_log2_ = static_cast<int>(std::lround(logsum / n));
    ratio_ = fx::Vec<B>(n, ctx);
    for (int i = 0; i < n; ++i)
      ratio_[i] = shift_value(B::div_round(sbar_[i], xbar_[i], ctx), -beta_log2_);

    fx::Mat<B> m(n + d, n + d, ctx);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        m(j, d + i) = a_(i, j);
        m(d + i, j) = a_(i, j);
      }
    for (int i = 0; i < n; ++i) m(d + i, d + i) = ratio_[i];
    auto inv = high_precision_inverse<B>(m, ledger_.eps);
    z_ = std::move(inv.z);

    ledger_.k = 0;
    ledger_.absorb_kappa(n + d + 1);
    ledger_.absorb_kappa(num::frob_norm(a_));
    absorb_ratio_kappa();
    ledger_.absorb_kappa(num::frob_norm(z_));

    xtil_ = fx::Vec<B>(n, ctx);
    stil_ = fx::Vec<B>(n, ctx);
    rtil_ = fx::Vec<B>(n, ctx);
    in_t_.assign(n, 0);
    t_.clear();
    refresh_base_vector();
  }

  void absorb_ratio_kappa() {
    long double f = 0, fi = 0;
    for (size_t i = 0; i < ratio_.size(); ++i) {
      double r = B::to_double(ratio_[i], a_.ctx);
      f += r * r;
      if (r != 0) fi += 1.0 / (r * r);
    }
    ledger_.absorb_kappa(std::sqrt(static_cast<double>(f)));
    ledger_.absorb_kappa(std::sqrt(static_cast<double>(fi)));
  }

  void refresh_base_vector() {
    const auto& ctx = a_.ctx;
    const int n = a_.rows;
    ubar_ = fx::Vec<B>(n, ctx);
    for (int i = 0; i < n; ++i) ubar_[i] = B::div_round(f_(rbar_[i], ctx), sbar_[i], ctx);
    fx::Vec<B> base = phat_apply_dense(ubar_);
    wtil_ = fx::Vec<B>(n, ctx);
    for (int i = 0; i < n; ++i) wtil_[i] = shift_value(base[i], beta_log2_);
    query_cache_valid_ = false;
  }

  void rebuild(const char* why) {
    // Absorb pending deltas into the anchors and build from scratch.
    for (int t : t_) {
      xbar_[t] = B::add(xbar_[t], xtil_[t]);
      sbar_[t] = B::add(sbar_[t], stil_[t]);
      rbar_[t] = B::add(rbar_[t], rtil_[t]);
    }
    build();
    ++ledger_.rebuilds;
    if (trace_on_) trace_.push_back({std::string("rebuild:") + why, ledger_.k, tracked_bound(), nan_()});
  }

  void flush() {
    const auto& ctx = a_.ctx;
    const int d = a_.cols;
    // Ratio deltas on T in the normalized scale; zero-delta slots only move r.
    std::vector<int> sup;
    std::vector<Raw> delta;
    for (int t : t_) {
      Raw xc = B::add(xbar_[t], xtil_[t]);
      Raw sc = B::add(sbar_[t], stil_[t]);
      Raw nr = shift_value(B::div_round(sc, xc, ctx), -beta_log2_);
      Raw dl = B::sub(nr, ratio_[t]);
      if (!(dl == Raw(0))) {
        sup.push_back(t);
        delta.push_back(dl);
      }
    }
    if (!sup.empty()) {
      const int m = static_cast<int>(sup.size());
      long double qf = 0, qif = 0;
      for (int i = 0; i < m; ++i) {
        double dd = B::to_double(delta[i], ctx);
        qf += dd * dd;
        if (dd != 0) qif += 1.0 / (dd * dd);
      }
      ledger_.absorb_kappa(std::sqrt(static_cast<double>(qf)));
      ledger_.absorb_kappa(std::sqrt(static_cast<double>(qif)));

      // inner = Delta^{-1} + Z_{TT} on the bordered indices.
      fx::Mat<B> inner(m, m, ctx);
      auto one = fx::raw_from_mpq<B>(mpq_class(1), ctx);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) inner(i, j) = z_(d + sup[i], d + sup[j]);
        inner(i, i) = B::add(inner(i, i), B::div_round(one, delta[i], ctx));
      }
      fx::Mat<B> dinv;
      bool ok = true;
      try {
        dinv = high_precision_inverse<B>(inner, ledger_.eps).z;
      } catch (const NumericFailureError&) {
        ok = false;
      }
      if (!ok) {
        rebuild("flush_failed");
        return;
      }
      // Z <- Z - Z U^T D^{-1} U Z; U selects bordered rows d + sup[j].
      const int nd = a_.rows + d;
      fx::Mat<B> zu(nd, m, ctx);
      for (int i = 0; i < nd; ++i)
        for (int j = 0; j < m; ++j) zu(i, j) = z_(i, d + sup[j]);
      fx::Mat<B> mid = fx::matmul(zu, dinv);  // nd x m
      for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j) {
          typename fx::AccOf<B>::type acc;
          for (int k = 0; k < m; ++k) acc.mac(mid(i, k), z_(d + sup[k], j));
          z_(i, j) = B::sub(z_(i, j), acc.finish(ctx));
        }
      ++ledger_.k;
      ledger_.absorb_kappa(num::frob_norm(z_));
      // Round to ceil(log2(100 (n+d)^2 kappa^5 / eps)) bits, capped by the context.
      double kap = static_cast<double>(ledger_.kappa);
      double bits = std::ceil(std::log2(100.0 * nd * nd / ledger_.eps) + 5.0 * std::log2(kap));
      int grid = static_cast<int>(std::min<double>(ctx.frac_bits, std::max(1.0, bits)));
      for (auto& e : z_.a) e = B::round_to_grid(e, grid, ctx);
    }
    // Absorb anchors, update ratios on T, clear pending state.
    for (int t : t_) {
      xbar_[t] = B::add(xbar_[t], xtil_[t]);
      sbar_[t] = B::add(sbar_[t], stil_[t]);
      rbar_[t] = B::add(rbar_[t], rtil_[t]);
      xtil_[t] = Raw(0);
      stil_[t] = Raw(0);
      rtil_[t] = Raw(0);
      ratio_[t] = shift_value(B::div_round(sbar_[t], xbar_[t], ctx), -beta_log2_);
      in_t_[t] = 0;
    }
    t_.clear();
    absorb_ratio_kappa();
    refresh_base_vector();
    if (trace_on_) trace_.push_back({"flush", ledger_.k, tracked_bound(), nan_()});
    if (rebuild_every_ > 0 && ledger_.k >= rebuild_every_) rebuild("k_budget");
    // Renormalize when the ratio window has drifted too far from 1.
    double worst = 0;
    for (size_t i = 0; i < ratio_.size(); ++i)
      worst = std::max(worst, std::fabs(std::log2(std::fabs(B::to_double(ratio_[i], a_.ctx)) + 1e-300)));
    if (worst > 26.0) rebuild("scale_window");
  }

  fx::Mat<B> a_;
  EntryFn f_;
  double alpha_hat_;
  long rebuild_every_;

  fx::Vec<B> xbar_, sbar_, rbar_;
  fx::Vec<B> xtil_, stil_, rtil_;
  std::vector<char> in_t_;
  std::vector<int> t_;
  fx::Vec<B> ratio_;  // (s/x)/2^beta_log2
  int beta_log2_ = 0;
  fx::Mat<B> z_;
  fx::Vec<B> ubar_;  // S^{-1} f(r) at the anchors
  fx::Vec<B> wtil_;  // cached base answer, true units

  ErrorLedger ledger_;
  mutable DsTrace trace_;
  bool trace_on_ = false;
  mutable fx::Vec<B> query_cache_;
  mutable bool query_cache_valid_ = false;
};

}  // namespace bitopt::im
