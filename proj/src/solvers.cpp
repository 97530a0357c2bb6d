#include "bitopt/solvers.hpp"

#include <cmath>
#include <sstream>

#include "bitopt/numerics.hpp"
#include "bitopt/sketch.hpp"

namespace bitopt::solv {

std::string RichardsonTrace::to_csv() const {
  std::ostringstream out;
  out << "iter,m_norm_bound,residual\n";
  for (const auto& r : rows) out << r.iter << ',' << r.bound << ',' << r.residual << '\n';
  return out.str();
}

namespace {

using N = fx::Narrow;

FxVector apply_normal(const FxMatrix& a, const FxVector& w, const FxVector& x) {
  FxVector ax = fx::matvec(a, x);
  for (size_t i = 0; i < ax.size(); ++i) ax[i] = N::mul_round(w[i], ax[i], a.ctx);
  return fx::matvec_t(a, ax);
}

// Lemma contract: ||Mtil^{-1} - M^{-1}||_F <= eps_op / (d lambda ||A^T A||_2).
double precond_forward_target(const FxMatrix& m, double lambda, double eps_op) {
  double mnorm = num::two_norm_est(m);
  return eps_op / (m.rows * lambda * std::max(1.0, mnorm));
}

}  // namespace

FxVector richardson_normal(const FxMatrix& a, const FxVector& w, const FxVector& rhs,
                           const im::InverseOperator<N>& minv, const RichardsonConfig& cfg,
                           RichardsonTrace* trace, std::vector<FxVector>* iterates) {
  const auto& ctx = a.ctx;
  FxVector x(a.cols, ctx);  // x0 = 0
  if (iterates) iterates->push_back(x);
  const long iters = cfg.planned_iters();
  const double c = cfg.contraction();
  double bound = 1.0;
  for (long k = 0; k < iters; ++k) {
    try {
      FxVector g = apply_normal(a, w, x);
      for (size_t i = 0; i < g.size(); ++i) g[i] = N::sub(g[i], rhs[i]);
      FxVector step = minv.apply(g);
      for (size_t i = 0; i < x.size(); ++i) x[i] = N::sub(x[i], step[i]);
      bound *= c;
      if (trace) {
        double res = fx::norm2_double(g);
        trace->rows.push_back({k + 1, bound, res});
      }
      if (iterates) iterates->push_back(x);
    } catch (const OverflowError& e) {
      throw NumericFailureError(std::string("richardson: overflow at iteration ") +
                                    std::to_string(k) + ": " + e.what(),
                                k);
    }
  }
  return x;
}

FxVector richardson(const FxMatrix& a, const FxVector& b, const im::InverseOperator<N>& minv,
                    const RichardsonConfig& cfg, RichardsonTrace* trace,
                    std::vector<FxVector>* iterates) {
  FxVector ones(a.rows, a.ctx);
  for (auto& v : ones.x) v = fx::i128(1) << a.ctx.frac_bits;
  FxVector rhs = fx::matvec_t(a, b);
  return richardson_normal(a, ones, rhs, minv, cfg, trace, iterates);
}

RegressionResult solve_regression(const FxMatrix& a, const FxVector& b, double eps,
                                  std::uint64_t seed) {
  if (a.rows < a.cols) throw ParameterError("solve_regression: need n >= d");
  const double eps1 = 0.5;  // 1/(1-eps1) = 2 = 1 + 2^0, lambda = 3
  const double eps_op = 1e-3;
  RegressionResult out;

  for (int attempt = 0; attempt < 3; ++attempt) {
    sketch::Preconditioner pre;
    try {
      pre = sketch::spectral_preconditioner(a, eps1, seed + attempt);
      auto inv = im::high_precision_inverse<N>(
          pre.m, precond_forward_target(pre.m, pre.lambda, eps_op), im::InverseTarget::kForward);
      im::DenseInverseOperator<N> minv(std::move(inv.z), inv.forward_bound, "sketch-precond");
      // ||x0 - x*||_M <= sqrt(lambda) ||pi_A b||; drive the factor under eps.
      double target = eps / std::sqrt(pre.lambda) / 2.0;
      RichardsonConfig cfg(pre.lambda, eps_op, 200000, target);
      out.x = richardson(a, b, minv, cfg, &out.trace);
      out.lambda = pre.lambda;
      out.sketch_retries = attempt;
      return out;
    } catch (const SingularMatrixError&) {
      continue;  // rank-deficient sketch; retry with a fresh seed
    } catch (const NumericFailureError&) {
      continue;
    }
  }
  throw RetryExhaustedError("solve_regression: sketch preconditioner failed after 3 seeds");
}

ConstrainedResult constrained_weighted_regress(const FxMatrix& a, const FxVector& b,
                                               const FxVector& w,
                                               const im::InverseOperator<N>& minv, double lambda,
                                               double eps_op, double eps,
                                               RichardsonTrace* trace) {
  const auto& ctx = a.ctx;
  const auto one = fx::i128(1) << ctx.frac_bits;
  double rmax = 1.0;
  for (size_t i = 0; i < w.size(); ++i) {
    if (w[i] < one)
      throw ParameterError("constrained regress: weight below 1 at index " + std::to_string(i));
    rmax = std::max(rmax, N::to_double(w[i], ctx));
  }
  // Inner system (A^T W^{-1} A) z = b.
  FxVector winv(w.size(), ctx);
  for (size_t i = 0; i < w.size(); ++i) winv[i] = N::div_round(one, w[i], ctx);

  // k > (1/(1/lambda - eps)) log(R^2 lambda / eps).
  double denom = 1.0 / lambda - eps_op;
  if (!(denom > 0)) throw ParameterError("constrained regress: lambda/eps_op not contractive");
  long iters = static_cast<long>(std::ceil(std::log(rmax * rmax * lambda / eps) / denom)) + 1;

  RichardsonConfig cfg(lambda, eps_op, iters, 1e-300);  // fixed count via max_iters
  // planned_iters() would overshoot; run exactly `iters`.
  FxVector z(a.cols, ctx);
  double bound = 1.0;
  const double c = cfg.contraction();
  for (long k = 0; k < iters; ++k) {
    try {
      FxVector g = apply_normal(a, winv, z);
      for (size_t i = 0; i < g.size(); ++i) g[i] = N::sub(g[i], b[i]);
      FxVector step = minv.apply(g);
      for (size_t i = 0; i < z.size(); ++i) z[i] = N::sub(z[i], step[i]);
      bound *= c;
      if (trace) trace->rows.push_back({k + 1, bound, fx::norm2_double(g)});
    } catch (const OverflowError& e) {
      throw NumericFailureError(std::string("constrained regress overflow: ") + e.what(), k);
    }
  }
  ConstrainedResult out;
  out.iterations = iters;
  // x = W^{-1} A z
  FxVector az = fx::matvec(a, z);
  out.x = FxVector(a.rows, ctx);
  for (int i = 0; i < a.rows; ++i) out.x[i] = N::mul_round(winv[i], az[i], ctx);
  if (trace) out.trace = *trace;
  return out;
}

FxVector projection_apply(const FxMatrix& a, const FxVector& w, const FxVector& g,
                          const im::InverseOperator<N>& minv, long k, double lambda,
                          double eps_op, RichardsonTrace* trace) {
  const auto& ctx = a.ctx;
  // rhs = A^T sqrt(W) g
  FxVector sw(w.size(), ctx);
  for (size_t i = 0; i < w.size(); ++i) sw[i] = sqrt_value<N>(w[i], ctx);
  FxVector swg(w.size(), ctx);
  for (size_t i = 0; i < w.size(); ++i) swg[i] = N::mul_round(sw[i], g[i], ctx);
  FxVector rhs = fx::matvec_t(a, swg);

  RichardsonConfig cfg(lambda, eps_op, k, 1e-300);
  FxVector x(a.cols, ctx);
  const double c = cfg.contraction();
  double bound = 1.0;
  for (long it = 0; it < k; ++it) {
    FxVector gres = apply_normal(a, w, x);
    for (size_t i = 0; i < gres.size(); ++i) gres[i] = N::sub(gres[i], rhs[i]);
    FxVector step = minv.apply(gres);
    for (size_t i = 0; i < x.size(); ++i) x[i] = N::sub(x[i], step[i]);
    bound *= c;
    if (trace) trace->rows.push_back({it + 1, bound, fx::norm2_double(gres)});
  }
  // u = sqrt(W) A x
  FxVector ax = fx::matvec(a, x);
  FxVector u(a.rows, ctx);
  for (int i = 0; i < a.rows; ++i) u[i] = N::mul_round(sw[i], ax[i], ctx);
  return u;
}

}  // namespace bitopt::solv
