#pragma once

// Sparse oblivious embeddings for spectral preconditioning, leverage scores,
// and the leverage-overestimate refinement step.

#include <cstdint>
#include <string>
#include <vector>

#include "bitopt/fixed.hpp"
#include "bitopt/numerics.hpp"
#include "bitopt/rational.hpp"

namespace bitopt::sketch {

// Entries live in {0, +1/sqrt(s), -1/sqrt(s)} with s a power of four, so the
// scale 1/sqrt(s) = 2^-m is exact in binary fixed point.
struct SparseEmbedding {
  int rows = 0;
  int cols = 0;          // n
  int s = 1;             // nonzeros per column, power of four
  bool identity = false; // row budget exceeded n; embedding degenerated
  std::vector<std::vector<int>> row_index;   // per column, s rows
  std::vector<std::vector<signed char>> sign;  // per column, s signs (+1/-1)

  int scale_shift() const;  // m with s = 4^m
};

SparseEmbedding sparse_embedding(int n, int d, double eps, double delta, std::uint64_t seed);

// B = S A over fixed point (exact signed sums, one rounding for the 2^-m scale).
FxMatrix apply(const SparseEmbedding& s, const FxMatrix& a);
rat::RatMatrix apply(const SparseEmbedding& s, const rat::RatMatrix& a);

std::string to_json(const SparseEmbedding& s);
SparseEmbedding embedding_from_json(const std::string& text);

struct Preconditioner {
  FxMatrix m;        // d x d, A^T A <= m <= lambda A^T A w.h.p.
  double lambda = 1; // (1+eps1)/(1-eps1)
  bool identity_sketch = false;
};

// eps1 must satisfy: 1/(1-eps1) is one plus a power of two.
Preconditioner spectral_preconditioner(const FxMatrix& a, double eps1, std::uint64_t seed);

// Exact leverage scores tau_i = a_i^T (A^T A)^{-1} a_i via the rational path.
std::vector<double> leverage_scores(const FxMatrix& a);
rat::RatVector leverage_scores_exact(const rat::RatMatrix& a);

struct LeverageEstimate {
  std::vector<double> u;
  double alpha = 1.0;
  double c = 1.0;
};

struct RefineResult {
  std::vector<double> u;
  bool empty_sample = false;  // sample came back empty; input returned as-is
  int sampled_rows = 0;
};

// Appendix refinement: sample by the overestimate, re-measure generalized
// leverage against the sampled gram matrix, clip from above.
RefineResult undersample_refine(const FxMatrix& a, const LeverageEstimate& u, double beta,
                                std::uint64_t seed);

}  // namespace bitopt::sketch
