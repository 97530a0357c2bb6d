#pragma once

// Backward-stable low-rank inverse maintenance: the Sherman-Morrison-Woodbury
// correction kernel, the dense data structure (DDS), the operator-backed
// sparse-style data structure (SDS), and the projection-maintenance data
// structure (PDS). Each structure tracks the analytic error bound of its
// update recurrence alongside the updates themselves.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bitopt/errors.hpp"
#include "bitopt/fixed.hpp"
#include "bitopt/numerics.hpp"
#include "bitopt/rational.hpp"

namespace bitopt::im {

// --- trace -------------------------------------------------------------------

struct DsTraceRow {
  std::string event;  // init | stage | flush | query | rebuild | budget_vacuous
  long k = 0;
  double tracked_bound = 0;
  double measured_error = std::numeric_limits<double>::quiet_NaN();
};

using DsTrace = std::vector<DsTraceRow>;

std::string trace_to_csv(const DsTrace& t);

// --- high-precision inversion -------------------------------------------------

// Newton-refined inverse with a verified residual: returns Z with
// ||Z^-1 - M||_F <= target_backward, certified through ||I - M Z||_F.
template <class B>
struct InverseResult {
  fx::Mat<B> z;
  double residual_frob = 0;   // ||I - M Z||_F at exit
  double backward_bound = 0;  // ||M||_F * rho / (1 - rho) >= ||Z^-1 - M||_F
  double forward_bound = 0;   // ||Z||_F * rho / (1 - rho) >= ||Z - M^-1||_F
};

namespace detail {

// Long-double LU inverse seed (partial pivoting).
num::LMat lu_inverse(const num::LMat& m);

template <class B>
fx::Mat<B> identity_mat(int n, const PrecisionContext& ctx) {
  fx::Mat<B> id(n, n, ctx);
  for (int i = 0; i < n; ++i)
    id(i, i) = fx::raw_from_mpq<B>(mpq_class(1), ctx);
  return id;
}

template <class B>
fx::Mat<B> from_lmat(const num::LMat& m, const PrecisionContext& ctx) {
  fx::Mat<B> r(m.rows, m.cols, ctx);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j)
      r(i, j) = fx::raw_from_double<B>(static_cast<double>(m(i, j)), ctx);
  return r;
}

}  // namespace detail

enum class InverseTarget { kBackward, kForward };

template <class B>
InverseResult<B> high_precision_inverse(const fx::Mat<B>& m, double target,
                                        InverseTarget kind = InverseTarget::kBackward) {
  if (m.rows != m.cols) throw ParameterError("high_precision_inverse: square input required");
  const int d = m.rows;
  num::LMat ml = num::to_lmat(m);
  num::LMat seed = detail::lu_inverse(ml);
  fx::Mat<B> z = detail::from_lmat<B>(seed, m.ctx);
  const double m_frob = num::frob_norm(m);

  double best_rho = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 48; ++iter) {
    // R = I - M Z, exact dots rounded once per entry.
    fx::Mat<B> mz = fx::matmul(m, z);
    fx::Mat<B> r(d, d, m.ctx);
    auto one = fx::raw_from_mpq<B>(mpq_class(1), m.ctx);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        r(i, j) = B::sub(i == j ? one : typename B::Raw(0), mz(i, j));
    double rho = num::frob_norm(r);
    if (rho < 1.0) {
      double backward = m_frob * rho / (1.0 - rho);
      double forward = num::frob_norm(z) * rho / (1.0 - rho);
      double achieved = kind == InverseTarget::kBackward ? backward : forward;
      if (achieved <= target) {
        InverseResult<B> out{std::move(z), rho, backward, forward};
        return out;
      }
    }
    if (rho >= best_rho * 0.9 && iter > 2)
      throw NumericFailureError("high_precision_inverse: residual stalled at " +
                                    std::to_string(rho) + " before reaching target " +
                                    std::to_string(target),
                                iter);
    best_rho = std::min(best_rho, rho);
    // Newton step Z <- Z + Z R.
    fx::Mat<B> zr = fx::matmul(z, r);
    for (size_t i = 0; i < z.a.size(); ++i) z.a[i] = B::add(z.a[i], zr.a[i]);
  }
  throw NumericFailureError("high_precision_inverse: iteration budget exhausted", 48);
}

// --- inverse operator interface ------------------------------------------------

template <class B>
class InverseOperator {
 public:
  virtual ~InverseOperator() = default;
  virtual fx::Vec<B> apply(const fx::Vec<B>& v) const = 0;
  virtual fx::Mat<B> apply_block(const fx::Mat<B>& block) const = 0;
  virtual double declared_frob_error() const = 0;
  virtual std::string target_descriptor() const = 0;
  // Explicit matrix when the backend has one (the dense backend does); used
  // for audits and the SDS correction algebra.
  virtual const fx::Mat<B>* explicit_matrix() const { return nullptr; }
};

template <class B>
class DenseInverseOperator final : public InverseOperator<B> {
 public:
  DenseInverseOperator(fx::Mat<B> z, double err, std::string descr)
      : z_(std::move(z)), err_(err), descr_(std::move(descr)) {}

  fx::Vec<B> apply(const fx::Vec<B>& v) const override { return fx::matvec(z_, v); }
  fx::Mat<B> apply_block(const fx::Mat<B>& b) const override { return fx::matmul(z_, b); }
  double declared_frob_error() const override { return err_; }
  std::string target_descriptor() const override { return descr_; }
  const fx::Mat<B>* explicit_matrix() const override { return &z_; }

 private:
  fx::Mat<B> z_;
  double err_;
  std::string descr_;
};

template <class B>
using InverseFactory = std::function<std::unique_ptr<InverseOperator<B>>(
    const fx::Mat<B>& a, const fx::Vec<B>& w, double eps)>;

// Default backend: dense high-precision inversion of A^T W A with verified
// residual. Stands in for the out-of-scope block-Krylov construction behind
// the same interface and error contract.
template <class B>
std::unique_ptr<InverseOperator<B>> make_dense_gram_inverse(const fx::Mat<B>& a,
                                                            const fx::Vec<B>& w, double eps) {
  fx::Mat<B> g = fx::gram_weighted(a, w, a.ctx);
  auto inv = high_precision_inverse<B>(g, eps);
  return std::make_unique<DenseInverseOperator<B>>(std::move(inv.z), inv.backward_bound,
                                                   "dense-gram-inverse");
}

// --- SMW correction kernel ------------------------------------------------------

// Z_new^{-1} ~ Ztil^{-1} - Ztil^{-1} U D^{-1} V^T Ztil^{-1} with
// ||D^{-1} - (C^{-1} + V^T Ztil^{-1} U)^{-1}||_F <= eps2. `cinv` supplies the
// exact inverse when the caller has one (diagonal updates do).
template <class B>
fx::Mat<B> smw_correct(const fx::Mat<B>& zinv, const fx::Mat<B>& u, const fx::Mat<B>& c,
                       const fx::Mat<B>& v, double eps2,
                       const fx::Mat<B>* cinv_opt = nullptr) {
  const int r = c.rows;
  if (r == 0) return zinv;
  fx::Mat<B> cinv;
  if (cinv_opt) {
    cinv = *cinv_opt;
  } else {
    cinv = high_precision_inverse<B>(c, eps2 / 4).z;
  }
  // H = C^{-1} + V^T Zinv U
  fx::Mat<B> zu = fx::matmul(zinv, u);
  fx::Mat<B> h(r, r, zinv.ctx);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) {
      typename fx::AccOf<B>::type acc;
      for (int k = 0; k < v.rows; ++k) acc.mac(v(k, i), zu(k, j));
      h(i, j) = B::add(cinv(i, j), acc.finish(zinv.ctx));
    }
  double cond = num::cond_estimate(h);
  if (!(cond < 1.0 / eps2))
    throw UpdateRejectedError("smw_correct: inner matrix condition estimate " +
                              std::to_string(cond) + " exceeds 1/eps2");
  fx::Mat<B> dinv;
  try {
    dinv = high_precision_inverse<B>(h, eps2).z;
  } catch (const NumericFailureError&) {
    throw UpdateRejectedError("smw_correct: inner inverse unreachable at this precision");
  }
  // result = zinv - (Zinv U) D^{-1} (V^T Zinv); Zinv is maintained as the
  // (approximate) inverse of a symmetric matrix, but we follow the asymmetric
  // formula literally.
  fx::Mat<B> vtz(r, zinv.cols, zinv.ctx);  // V^T Zinv
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < zinv.cols; ++j) {
      typename fx::AccOf<B>::type acc;
      for (int k = 0; k < v.rows; ++k) acc.mac(v(k, i), zinv(k, j));
      vtz(i, j) = acc.finish(zinv.ctx);
    }
  fx::Mat<B> mid = fx::matmul(dinv, vtz);      // r x n
  fx::Mat<B> corr = fx::matmul(zu, mid);       // n x n
  fx::Mat<B> out(zinv.rows, zinv.cols, zinv.ctx);
  for (size_t i = 0; i < out.a.size(); ++i) out.a[i] = B::sub(zinv.a[i], corr.a[i]);
  return out;
}

// Projection update for weights V + Q (Q sparse diagonal with support T):
// P - P_{:T} (Q_{T,T}^{-1} + P_{T,T})^{-1} P_{:T}^T.
template <class B>
fx::Mat<B> woodbury_projection(const fx::Mat<B>& p, const std::vector<int>& support,
                               const std::vector<typename B::Raw>& q_diag, double eps) {
  const int t = static_cast<int>(support.size());
  if (t == 0) return p;
  const auto& ctx = p.ctx;
  fx::Mat<B> inner(t, t, ctx);
  auto one = fx::raw_from_mpq<B>(mpq_class(1), ctx);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < t; ++j) inner(i, j) = p(support[i], support[j]);
    // + Q^{-1}
    inner(i, i) = B::add(inner(i, i), B::div_round(one, q_diag[i], ctx));
  }
  fx::Mat<B> dinv;
  try {
    dinv = high_precision_inverse<B>(inner, eps).z;
  } catch (const NumericFailureError&) {
    throw UpdateRejectedError("woodbury_projection: singular inner block");
  }
  fx::Mat<B> pt(p.rows, t, ctx);
  for (int i = 0; i < p.rows; ++i)
    for (int j = 0; j < t; ++j) pt(i, j) = p(i, support[j]);
  fx::Mat<B> mid = fx::matmul(pt, dinv);  // n x t
  fx::Mat<B> out = p;
  for (int i = 0; i < p.rows; ++i)
    for (int j = 0; j < p.cols; ++j) {
      typename fx::AccOf<B>::type acc;
      for (int k = 0; k < t; ++k) acc.mac(mid(i, k), pt(j, k));
      out(i, j) = B::sub(out(i, j), acc.finish(ctx));
    }
  return out;
}

// --- shared update bookkeeping ---------------------------------------------------

struct ErrorLedger {
  long k = 0;                     // SMW applications since the last (re)build
  long double kappa = 0;          // running max of the measured norm bounds
  double eps = 0;                 // per-step error parameter
  bool budget_vacuous = false;    // paper's eps precondition unsatisfiable here
  long rebuilds = 0;

  void absorb_kappa(double candidate) {
    if (candidate > kappa) kappa = candidate;
  }
  // (512 k kappa^26 + 2 k kappa^2 + 1) eps
  double tracked_bound() const {
    long double k26 = 1;
    for (int i = 0; i < 26; ++i) k26 *= kappa;
    long double b = (512.0L * k * k26 + 2.0L * k * kappa * kappa + 1.0L) * eps;
    return static_cast<double>(b);
  }
  bool budget_ok() const {
    long double k26 = 1;
    for (int i = 0; i < 26; ++i) k26 *= kappa;
    long double cap = 1.0L / (2.0L * kappa * (512.0L * (k + 1) * k26 + 2.0L * k * kappa * kappa + 1.0L));
    return eps < static_cast<double>(cap);
  }
};

// Small-delta split (the paper's two-updates remark): any |q_i| < 1 goes
// through as (q_i + 1, then -1) so ||Q^-1|| stays bounded.
template <class B>
struct SplitUpdate {
  std::vector<typename B::Raw> first;
  std::vector<typename B::Raw> second;  // empty when no split was needed
  std::vector<int> second_support;
};

template <class B>
SplitUpdate<B> split_small_deltas(const std::vector<int>& support,
                                  const std::vector<typename B::Raw>& q,
                                  const PrecisionContext& ctx) {
  SplitUpdate<B> s;
  auto one = fx::raw_from_mpq<B>(mpq_class(1), ctx);
  s.first = q;
  for (size_t i = 0; i < q.size(); ++i) {
    mpq_class absq = abs(fx::raw_to_mpq<B>(q[i], ctx));
    if (absq < 1) {
      s.first[i] = B::add(q[i], one);
      s.second.push_back(B::neg(one));
      s.second_support.push_back(support[i]);
    }
  }
  return s;
}

// --- dense data structure (DDS) ----------------------------------------------------

template <class B>
class Dds {
 public:
  Dds(const fx::Mat<B>& a, const fx::Vec<B>& w, double eps, long rebuild_every = 256)
      : a_(a), rebuild_every_(rebuild_every) {
    ledger_.eps = eps;
    init_from(w);
    if (trace_on_) trace_.push_back({"init", ledger_.k, ledger_.tracked_bound(), nan_()});
    if (!ledger_.budget_ok()) {
      ledger_.budget_vacuous = true;
      if (trace_on_) trace_.push_back({"budget_vacuous", ledger_.k, ledger_.tracked_bound(), nan_()});
    }
  }

  // v_S = u. Splits small deltas, applies SMW per the recurrence, rounds the
  // maintained inverse onto the ceil(log2(10 d^2 kappa / eps)) grid.
  void update(const std::vector<int>& support, const std::vector<typename B::Raw>& u) {
    if (support.empty()) return;
    std::vector<typename B::Raw> q(support.size());
    for (size_t i = 0; i < support.size(); ++i) {
      q[i] = B::sub(u[i], v_[support[i]]);
      v_[support[i]] = u[i];
    }
    auto split = split_small_deltas<B>(support, q, a_.ctx);
    apply_diag_update(support, split.first);
    if (!split.second.empty()) apply_diag_update(split.second_support, split.second);
  }

  fx::Vec<B> query(const fx::Vec<B>& b) const { return fx::matvec(zinv_, b); }

  const fx::Mat<B>& zinv() const { return zinv_; }
  const fx::Vec<B>& weights() const { return v_; }
  const ErrorLedger& ledger() const { return ledger_; }
  DsTrace& trace() { return trace_; }
  void enable_trace(bool on) { trace_on_ = on; }

  // Exact rational audit of the backward error ||Zinv^{-1} - A^T V A||_F.
  double audit_backward_error() const {
    rat::RatMatrix zr = rat::from_fx(zinv_);
    rat::RatMatrix zinv_inv = rat::exact_inverse(zr);
    rat::RatMatrix a = rat::from_fx(a_);
    rat::RatMatrix g(a.cols, a.cols);
    rat::RatVector w = rat::from_fx(v_);
    for (int j = 0; j < a.cols; ++j)
      for (int k = 0; k < a.cols; ++k) {
        mpq_class s = 0;
        for (int i = 0; i < a.rows; ++i) s += a(i, j) * w[i] * a(i, k);
        g(j, k) = s;
      }
    mpq_class err2 = 0;
    for (int i = 0; i < g.rows; ++i)
      for (int j = 0; j < g.cols; ++j) {
        mpq_class d = zinv_inv(i, j) - g(i, j);
        err2 += d * d;
      }
    double e = std::sqrt(err2.get_d());
    if (trace_on_) trace_.push_back({"query", ledger_.k, ledger_.tracked_bound(), e});
    return e;
  }

 private:
  static double nan_() { return std::numeric_limits<double>::quiet_NaN(); }

  void init_from(const fx::Vec<B>& w) {
    v_ = w;
    fx::Mat<B> g = fx::gram_weighted(a_, v_, a_.ctx);
    auto inv = high_precision_inverse<B>(g, ledger_.eps);
    zinv_ = std::move(inv.z);
    ledger_.k = 0;
    ledger_.absorb_kappa(a_.rows + a_.cols + 1);
    ledger_.absorb_kappa(num::frob_norm(a_));
    ledger_.absorb_kappa(num::frob_norm(g));
    ledger_.absorb_kappa(num::frob_norm(zinv_));
  }

  void rebuild(const char* why) {
    init_from(v_);
    ++ledger_.rebuilds;
    if (trace_on_) trace_.push_back({std::string("rebuild:") + why, ledger_.k, ledger_.tracked_bound(), nan_()});
  }

  void apply_diag_update(const std::vector<int>& support, const std::vector<typename B::Raw>& q) {
    const int t = static_cast<int>(support.size());
    const auto& ctx = a_.ctx;
    // kappa bookkeeping for Q and Q^{-1}.
    long double qf = 0, qif = 0;
    for (int i = 0; i < t; ++i) {
      double d = B::to_double(q[i], ctx);
      qf += d * d;
      if (d != 0) qif += 1.0 / (d * d);
    }
    ledger_.absorb_kappa(std::sqrt(static_cast<double>(qf)));
    ledger_.absorb_kappa(std::sqrt(static_cast<double>(qif)));

    fx::Mat<B> u(a_.cols, t, ctx);  // A_S^T as d x t
    for (int j = 0; j < t; ++j)
      for (int i = 0; i < a_.cols; ++i) u(i, j) = a_(support[j], i);
    // C = Q_{S,S}; C^{-1} exact reciprocal per entry.
    fx::Mat<B> c(t, t, ctx), cinv(t, t, ctx);
    auto one = fx::raw_from_mpq<B>(mpq_class(1), ctx);
    for (int i = 0; i < t; ++i) {
      c(i, i) = q[i];
      cinv(i, i) = B::div_round(one, q[i], ctx);
    }
    try {
      zinv_ = smw_correct<B>(zinv_, u, c, u, ledger_.eps, &cinv);
    } catch (const UpdateRejectedError&) {
      rebuild("smw_rejected");
      return;
    }
    ++ledger_.k;
    ledger_.absorb_kappa(num::frob_norm(zinv_));
    round_state();
    if (trace_on_) trace_.push_back({"flush", ledger_.k, ledger_.tracked_bound(), nan_()});
    if (rebuild_every_ > 0 && ledger_.k >= rebuild_every_) rebuild("k_budget");
  }

  void round_state() {
    // ceil(log2(10 d^2 kappa / eps)) fractional bits, capped at the context.
    double kappa = static_cast<double>(ledger_.kappa);
    double bits = std::ceil(std::log2(10.0 * a_.cols * a_.cols * kappa / ledger_.eps));
    int grid = static_cast<int>(std::min<double>(a_.ctx.frac_bits, std::max(1.0, bits)));
    for (auto& e : zinv_.a) e = B::round_to_grid(e, grid, a_.ctx);
  }

  fx::Mat<B> a_;
  fx::Vec<B> v_;
  fx::Mat<B> zinv_;
  ErrorLedger ledger_;
  long rebuild_every_;
  mutable DsTrace trace_;
  bool trace_on_ = false;
};

// --- sparse-style data structure (SDS) ----------------------------------------------

template <class B>
class Sds {
 public:
  Sds(const fx::Mat<B>& a, const fx::Vec<B>& w, double eps, int m,
      InverseFactory<B> factory = nullptr, long rebuild_every = 256)
      : a_(a), m_(m), factory_(factory ? std::move(factory) : &make_dense_gram_inverse<B>),
        rebuild_every_(rebuild_every) {
    if (m_ < 1) throw ParameterError("sds: rebuild-rank parameter m must be >= 1");
    ledger_.eps = eps;
    init_from(w);
    if (trace_on_) trace_.push_back({"init", ledger_.k, ledger_.tracked_bound(), nan_()});
    if (!ledger_.budget_ok()) {
      ledger_.budget_vacuous = true;
      if (trace_on_) trace_.push_back({"budget_vacuous", ledger_.k, ledger_.tracked_bound(), nan_()});
    }
  }

  void update(const std::vector<int>& support, const std::vector<typename B::Raw>& u) {
    if (support.empty()) return;
    // m = 1 is the degenerate rebuild-always mode; otherwise rank >= n/m
    // triggers a full re-initialization.
    if (m_ == 1 || static_cast<long>(support.size()) * m_ >= a_.rows) {
      for (size_t i = 0; i < support.size(); ++i) v_[support[i]] = u[i];
      init_from(v_);
      ++ledger_.rebuilds;
      if (trace_on_) trace_.push_back({"rebuild:rank", ledger_.k, ledger_.tracked_bound(), nan_()});
      return;
    }
    std::vector<typename B::Raw> q(support.size());
    for (size_t i = 0; i < support.size(); ++i) {
      q[i] = B::sub(u[i], v_[support[i]]);
      v_[support[i]] = u[i];
    }
    auto split = split_small_deltas<B>(support, q, a_.ctx);
    apply_diag_update(support, split.first);
    if (!split.second.empty()) apply_diag_update(split.second_support, split.second);
  }

  fx::Vec<B> query(const fx::Vec<B>& b) const {
    fx::Vec<B> zb = base_->apply(b);
    fx::Vec<B> tb = fx::matvec(t_, b);
    fx::Vec<B> out(zb.size(), a_.ctx);
    for (size_t i = 0; i < zb.size(); ++i) out[i] = B::add(zb[i], tb[i]);
    return out;
  }

  const ErrorLedger& ledger() const { return ledger_; }
  DsTrace& trace() { return trace_; }
  void enable_trace(bool on) { trace_on_ = on; }
  const fx::Vec<B>& weights() const { return v_; }

  // Effective explicit operator (base + correction); audits only.
  fx::Mat<B> effective_matrix() const {
    const fx::Mat<B>* zm = base_->explicit_matrix();
    if (!zm) throw NotImplementedError("sds audit needs an explicit base operator");
    fx::Mat<B> eff = t_;
    for (size_t i = 0; i < eff.a.size(); ++i) eff.a[i] = B::add(eff.a[i], zm->a[i]);
    return eff;
  }

  double audit_backward_error() const {
    rat::RatMatrix zr = rat::from_fx(effective_matrix());
    rat::RatMatrix zinv_inv = rat::exact_inverse(zr);
    rat::RatMatrix a = rat::from_fx(a_);
    rat::RatVector w = rat::from_fx(v_);
    mpq_class err2 = 0;
    for (int j = 0; j < a.cols; ++j)
      for (int k = 0; k < a.cols; ++k) {
        mpq_class s = 0;
        for (int i = 0; i < a.rows; ++i) s += a(i, j) * w[i] * a(i, k);
        mpq_class d = zinv_inv(j, k) - s;
        err2 += d * d;
      }
    double e = std::sqrt(err2.get_d());
    if (trace_on_) trace_.push_back({"query", ledger_.k, ledger_.tracked_bound(), e});
    return e;
  }

 private:
  static double nan_() { return std::numeric_limits<double>::quiet_NaN(); }

  void init_from(const fx::Vec<B>& w) {
    v_ = w;
    base_ = factory_(a_, v_, ledger_.eps);
    t_ = fx::Mat<B>(a_.cols, a_.cols, a_.ctx);
    ledger_.k = 0;
    ledger_.absorb_kappa(a_.rows + a_.cols + 1);
    ledger_.absorb_kappa(num::frob_norm(a_));
  }

  void apply_diag_update(const std::vector<int>& support, const std::vector<typename B::Raw>& q) {
    const int t = static_cast<int>(support.size());
    const auto& ctx = a_.ctx;
    long double qf = 0, qif = 0;
    for (int i = 0; i < t; ++i) {
      double d = B::to_double(q[i], ctx);
      qf += d * d;
      if (d != 0) qif += 1.0 / (d * d);
    }
    ledger_.absorb_kappa(std::sqrt(static_cast<double>(qf)));
    ledger_.absorb_kappa(std::sqrt(static_cast<double>(qif)));

    // W = A_S (Z + T): |S| x d through the operator plus the correction.
    fx::Mat<B> ast(a_.cols, t, ctx);
    for (int j = 0; j < t; ++j)
      for (int i = 0; i < a_.cols; ++i) ast(i, j) = a_(support[j], i);
    fx::Mat<B> zast = base_->apply_block(ast);         // d x t
    fx::Mat<B> tast = fx::matmul(t_, ast);             // d x t
    for (size_t i = 0; i < zast.a.size(); ++i) zast.a[i] = B::add(zast.a[i], tast.a[i]);
    // H = Q^{-1} + A_S (Z+T) A_S^T
    fx::Mat<B> h(t, t, ctx);
    auto one = fx::raw_from_mpq<B>(mpq_class(1), ctx);
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < t; ++j) {
        typename fx::AccOf<B>::type acc;
        for (int k = 0; k < a_.cols; ++k) acc.mac(ast(k, i), zast(k, j));
        h(i, j) = acc.finish(ctx);
        if (i == j) h(i, j) = B::add(h(i, j), B::div_round(one, q[i], ctx));
      }
    double cond = num::cond_estimate(h);
    if (!(cond < 1.0 / ledger_.eps)) {
      init_from(v_);
      ++ledger_.rebuilds;
      if (trace_on_) trace_.push_back({"rebuild:smw_rejected", ledger_.k, ledger_.tracked_bound(), nan_()});
      return;
    }
    fx::Mat<B> dinv;
    try {
      dinv = high_precision_inverse<B>(h, ledger_.eps).z;
    } catch (const NumericFailureError&) {
      init_from(v_);
      ++ledger_.rebuilds;
      if (trace_on_) trace_.push_back({"rebuild:smw_rejected", ledger_.k, ledger_.tracked_bound(), nan_()});
      return;
    }
    // T <- T - (Z+T)^T A_S^T D^{-1} A_S (Z+T) = T - W^T D^{-1} W with
    // W^T = zast (d x t): correction = zast * dinv * zast^T.
    fx::Mat<B> mid = fx::matmul(zast, dinv);  // d x t
    for (int i = 0; i < a_.cols; ++i)
      for (int j = 0; j < a_.cols; ++j) {
        typename fx::AccOf<B>::type acc;
        for (int k = 0; k < t; ++k) acc.mac(mid(i, k), zast(j, k));
        t_(i, j) = B::sub(t_(i, j), acc.finish(ctx));
      }
    ++ledger_.k;
    ledger_.absorb_kappa(num::frob_norm(t_));
    round_state();
    if (trace_on_) trace_.push_back({"flush", ledger_.k, ledger_.tracked_bound(), nan_()});
    if (rebuild_every_ > 0 && ledger_.k >= rebuild_every_) {
      init_from(v_);
      ++ledger_.rebuilds;
      if (trace_on_) trace_.push_back({"rebuild:k_budget", ledger_.k, ledger_.tracked_bound(), nan_()});
    }
  }

  void round_state() {
    double kappa = static_cast<double>(ledger_.kappa);
    double bits = std::ceil(std::log2(10.0 * a_.cols * a_.cols * kappa / ledger_.eps));
    int grid = static_cast<int>(std::min<double>(a_.ctx.frac_bits, std::max(1.0, bits)));
    for (auto& e : t_.a) e = B::round_to_grid(e, grid, a_.ctx);
  }

  fx::Mat<B> a_;
  fx::Vec<B> v_;
  int m_;
  InverseFactory<B> factory_;
  std::unique_ptr<InverseOperator<B>> base_;
  fx::Mat<B> t_;
  ErrorLedger ledger_;
  long rebuild_every_;
  mutable DsTrace trace_;
  bool trace_on_ = false;
};

}  // namespace bitopt::im
