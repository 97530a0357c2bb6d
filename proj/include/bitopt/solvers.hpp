#pragma once

// Preconditioned Richardson iteration in three flavors: plain regression,
// constrained weighted regression, and the IPM projection step. Stopping is
// always a fixed iteration count derived from the target (never residual
// based), so contraction violations stay observable.

#include <cstdint>
#include <string>
#include <vector>

#include "bitopt/fixed.hpp"
#include "bitopt/invmaint.hpp"
#include "bitopt/rational.hpp"

namespace bitopt::solv {

struct RichardsonConfig {
  double lambda = 1.0;   // preconditioner quality, >= 1
  double eps_op = 0.0;   // Frobenius error budget of the supplied inverse
  long max_iters = 1000;
  double target = 1e-12;  // final multiplicative error (1 - 1/lambda + eps)^k <= target

  RichardsonConfig(double lam, double eps, long iters, double tgt)
      : lambda(lam), eps_op(eps), max_iters(iters), target(tgt) {
    if (!(lambda >= 1)) throw ParameterError("richardson: lambda must be >= 1");
    if (!(1.0 - 1.0 / lambda + eps_op < 1.0))
      throw ParameterError("richardson: 1 - 1/lambda + eps_op must stay below 1");
    if (!(target > 0) || max_iters < 1) throw ParameterError("richardson: bad target/iters");
  }

  double contraction() const { return 1.0 - 1.0 / lambda + eps_op; }
  long planned_iters() const {
    double c = contraction();
    if (c <= 0) return 1;
    long k = static_cast<long>(std::ceil(std::log(target) / std::log(c)));
    return std::max(1L, std::min(k, max_iters));
  }
};

struct RichardsonRow {
  long iter;
  double bound;     // (1 - 1/lambda + eps)^iter
  double residual;  // ||A^T W A x - rhs||_2 (reporting only)
};

struct RichardsonTrace {
  std::vector<RichardsonRow> rows;
  std::string to_csv() const;
};

// Solve (A^T W A) z = rhs by z <- z - Minv (A^T W A z - rhs), z0 = 0, with a
// fixed iteration count. W is a diagonal weight vector (pass all-ones for the
// unweighted case).
FxVector richardson_normal(const FxMatrix& a, const FxVector& w, const FxVector& rhs,
                           const im::InverseOperator<fx::Narrow>& minv,
                           const RichardsonConfig& cfg, RichardsonTrace* trace = nullptr,
                           std::vector<FxVector>* iterates = nullptr);

// Plain least squares via richardson on the normal equations.
FxVector richardson(const FxMatrix& a, const FxVector& b,
                    const im::InverseOperator<fx::Narrow>& minv, const RichardsonConfig& cfg,
                    RichardsonTrace* trace = nullptr, std::vector<FxVector>* iterates = nullptr);

struct RegressionResult {
  FxVector x;
  double lambda = 0;
  int sketch_retries = 0;
  RichardsonTrace trace;
};

// Sketch preconditioner + high-precision inversion + Richardson; the output
// satisfies ||x - x*||_{A^T A} <= eps ||pi_A b||_2 w.h.p.
RegressionResult solve_regression(const FxMatrix& a, const FxVector& b, double eps,
                                  std::uint64_t seed);

struct ConstrainedResult {
  FxVector x;
  long iterations = 0;
  RichardsonTrace trace;
};

// argmin ||x||_W s.t. A^T x = b, via x = W^{-1} A (A^T W^{-1} A)^{-1} b with
// richardson on the inner system. minv approximates M^{-1} for some M with
// A^T W^{-1} A <= M <= lambda A^T W^{-1} A. Weights must lie in [1, R].
ConstrainedResult constrained_weighted_regress(const FxMatrix& a, const FxVector& b,
                                               const FxVector& w,
                                               const im::InverseOperator<fx::Narrow>& minv,
                                               double lambda, double eps_op, double eps,
                                               RichardsonTrace* trace = nullptr);

// u ~ sqrt(W) A (A^T W A)^{-1} A^T sqrt(W) g with exactly k iterations.
FxVector projection_apply(const FxMatrix& a, const FxVector& w, const FxVector& g,
                          const im::InverseOperator<fx::Narrow>& minv, long k, double lambda,
                          double eps_op, RichardsonTrace* trace = nullptr);

// Fixed-point square root of a nonnegative value (RNE in value space).
template <class B>
typename B::Raw sqrt_value(const typename B::Raw& v, const PrecisionContext& ctx) {
  mpz_class raw = B::to_mpz_raw(v);
  if (raw < 0) throw DomainError("sqrt of negative fixed-point value");
  mpz_class shifted = raw << ctx.frac_bits;
  mpz_class root, rem;
  mpz_sqrtrem(root.get_mpz_t(), rem.get_mpz_t(), shifted.get_mpz_t());
  // Round to nearest: bump when (root+1)^2 is closer.
  if (rem > root) ++root;
  return B::from_mpz_scaled(root);
}

}  // namespace bitopt::solv
