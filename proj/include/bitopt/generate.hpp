#pragma once

// Deterministic instance generators with certified radii, plus the condition
// stress families.

#include <cstdint>
#include <string>

#include "bitopt/lp.hpp"

namespace bitopt::gen {

// Bounded random LP: the last column of A is the all-ones vector, so the
// feasible set sits inside a scaled simplex and the outer radius is certified
// by construction; b comes from a strictly positive feasible point, which
// certifies the inner radius.
lp::LPInstance random_lp(int n, int d, std::uint64_t seed,
                         PrecisionContext ctx = PrecisionContext{});

// Lower bidiagonal d x d: 1 on the diagonal, 2 on the subdiagonal; condition
// number at least 2^(d-1).
FxMatrix bidiagonal(int d, PrecisionContext ctx = PrecisionContext{});

// The n x (n-1) bidiagonal LP family: R <= 2 sqrt(n), r > 1/3 via the
// certificate x = c/3.
lp::LPInstance lp_bidiagonal(int n, PrecisionContext ctx = PrecisionContext{});

// n x d with a duplicated column (rank d-1) for the padding path.
FxMatrix rank_deficient(int n, int d, std::uint64_t seed,
                        PrecisionContext ctx = PrecisionContext{});

}  // namespace bitopt::gen
