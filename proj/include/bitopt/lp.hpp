#pragma once

// Linear-programming solvers: modified-LP initialization, the robust IPM with
// lazy projection maintenance, the l2-potential IPM on top of DDS/SDS, the
// inverse-free exact-rational IPM, and the two-phase driver tying them
// together. Problems are min c^T x s.t. A^T x = b, x >= 0 with A in R^{n x d}.

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "bitopt/fixed.hpp"
#include "bitopt/rational.hpp"
#include "bitopt/solvers.hpp"

namespace bitopt::lp {

struct LPInstance {
  FxMatrix a;       // n x d, full column rank
  FxVector b;       // d
  FxVector c;       // n
  double r_inner = 0;
  double r_outer = 0;

  int n() const { return a.rows; }
  int d() const { return a.cols; }
  void validate() const;
};

struct CentralPoint {
  FxVector x;
  FxVector s;
  fx::i128 t = 0;
};

struct ModifiedLP {
  FxMatrix abar;     // (2n+1) x (d+1)
  FxVector bbar;     // d+1
  FxVector cbar;     // 2n+1
  FxVector x0bar;    // 2n+1
  FxVector s0bar;    // 2n+1
  fx::i128 t0 = 0;
  double rbar = 0;
  int n_orig = 0;
};

ModifiedLP build_modified_lp(const LPInstance& lp, double eps, std::uint64_t seed = 1);

struct ExtractedPoint {
  FxVector x;
  FxVector s;
  double worst_xminus_ratio = 0;  // max_i x^-_i / x^+_i
  double worst_stheta_ratio = 0;  // max_i s^theta / s^+_i
};

// Phase-1 terminal point -> original-variable point. Throws
// PhaseTransitionError when the componentwise centrality window fails.
ExtractedPoint extract_original_point(const ModifiedLP& mlp, const FxVector& xbar,
                                      const FxVector& sbar, double cinf_r, double eps);

double phi_potential(const std::vector<double>& r, double lambda);
std::vector<double> phi_gradient(const std::vector<double>& r, double lambda);

enum class Method { kRobust, kL2, kExact };

Method method_from_string(const std::string& name);
std::string to_string(Method m);

// Worst-case margins observed over a whole run; a margin >= 0 means the
// invariant held at every iteration.
struct InvariantRecord {
  std::string name;
  double margin = 0;  // min over iterations of (threshold - measured)
  double threshold = 0;
  bool pass() const { return margin >= 0; }
};

struct IpmAudit {
  long iterations = 0;
  long ds_rebuilds = 0;
  long ds_flushes = 0;
  double ds_tracked_bound = 0;
  double feasibility_drift = 0;  // ||A^T(x_out - x_0)||_2
  std::vector<InvariantRecord> invariants;
  bool all_pass() const {
    for (const auto& r : invariants)
      if (!r.pass()) return false;
    return true;
  }
};

struct IpmResult {
  FxVector x;
  FxVector s;
  fx::i128 t_final = 0;
  IpmAudit audit;
  std::vector<int> dropped_rows;  // inverse-free only: zeroed coordinates
};

struct IpmOptions {
  double eps2 = 1e-6;            // feasibility budget
  std::ostream* trace = nullptr; // per-iteration CSV rows when set
  long trace_stride = 1;
  long recenter_iters = 0;       // extra fixed-t centering steps before the loop
};

// Algorithm 5: cosh-potential IPM with lazy projection maintenance.
IpmResult robust_ipm(const FxMatrix& a, const FxVector& x0, const FxVector& s0, fx::i128 t0,
                     fx::i128 t_final, const IpmOptions& opt);

// Algorithm 7: 2-norm potential IPM; weights through the dense data structure.
IpmResult l2_ipm_core(const FxMatrix& a, const FxVector& x0, const FxVector& s0, fx::i128 t0,
                      fx::i128 t_final, const IpmOptions& opt);

// Algorithm 6: qround anchors, exact rational solves, step and threshold
// rounding at exp(-c n) (floored at the context grain).
struct InverseFreeOptions {
  double c_round = 4.0;
  double c_zero = 3.0;
  std::ostream* trace = nullptr;
  long trace_stride = 1;
  long recenter_iters = 0;
};
IpmResult inverse_free_ipm(const FxMatrix& a, const FxVector& x0, const FxVector& s0,
                           fx::i128 t0, fx::i128 t_final, const InverseFreeOptions& opt);

struct LpSolveResult {
  FxVector x;
  double objective = 0;
  double feasibility = 0;     // ||A^T x - b||_2
  double duality_gap = 0;     // c^T x - b^T y, y recovered by least squares
  IpmAudit phase1;
  IpmAudit phase2;
  int phase1_retries = 0;
};

// Algorithm 4 two-phase driver.
LpSolveResult lp_solve(const LPInstance& lp, double eps1, double eps2, Method method,
                       std::ostream* trace = nullptr, std::uint64_t seed = 1);

// Exact rational optimum by basis enumeration; the oracle for small fixtures.
struct VertexOpt {
  mpq_class objective;
  rat::RatVector x;
  bool feasible = false;
};
VertexOpt lp_vertex_opt(const rat::RatMatrix& a, const rat::RatVector& b, const rat::RatVector& c);
VertexOpt lp_vertex_opt(const LPInstance& lp);

}  // namespace bitopt::lp
