#include "bitopt/sketch.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "bitopt/rng.hpp"

namespace bitopt::sketch {

using nlohmann::json;

int SparseEmbedding::scale_shift() const {
  int m = 0, v = s;
  while (v > 1) {
    v >>= 2;
    ++m;
  }
  return m;
}

SparseEmbedding sparse_embedding(int n, int d, double eps, double delta, std::uint64_t seed) {
  if (!(eps > 0 && eps < 1) || !(delta > 0 && delta < 1))
    throw ParameterError("sparse_embedding: eps and delta must lie in (0,1)");
  if (n < d || d < 1) throw ParameterError("sparse_embedding: need n >= d >= 1");

  const double logterm = std::ceil(std::log2(std::max(2.0, double(d) / delta)));
  long rows = std::lround(std::max(4.0 * d, std::ceil(2.0 * d * logterm * logterm / (eps * eps))));

  SparseEmbedding e;
  e.cols = n;
  if (rows > n) {
    // Budget exceeds the row count; degenerate to the identity (flagged).
    e.rows = n;
    e.s = 1;
    e.identity = true;
    return e;
  }
  e.rows = static_cast<int>(rows);

  long s = 1;
  const double s_target = 2.0 * logterm / eps;
  while (s < s_target) s *= 4;
  while (s > e.rows) s /= 4;  // keep a replacement-free choice possible
  if (s < 1) s = 1;
  e.s = static_cast<int>(s);

  CounterRng rng(seed, /*stream=*/2);
  e.row_index.resize(n);
  e.sign.resize(n);
  for (int col = 0; col < n; ++col) {
    std::set<int> used;
    auto& idx = e.row_index[col];
    auto& sg = e.sign[col];
    idx.reserve(e.s);
    sg.reserve(e.s);
    while (static_cast<int>(idx.size()) < e.s) {
      int r = static_cast<int>(rng.next_below(e.rows));
      if (!used.insert(r).second) continue;
      idx.push_back(r);
      sg.push_back(rng.next_bool() ? 1 : -1);
    }
  }
  return e;
}

FxMatrix apply(const SparseEmbedding& s, const FxMatrix& a) {
  if (s.cols != a.rows) throw ParameterError("sketch apply: dimension mismatch");
  if (s.identity) return a;
  FxMatrix b(s.rows, a.cols, a.ctx);
  const int m = s.scale_shift();
  for (int col = 0; col < s.cols; ++col) {
    for (int k = 0; k < s.s; ++k) {
      int r = s.row_index[col][k];
      bool neg = s.sign[col][k] < 0;
      for (int j = 0; j < a.cols; ++j) {
        auto v = a(col, j);
        b(r, j) = fx::Narrow::add(b(r, j), neg ? -v : v);
      }
    }
  }
  if (m > 0) {
    // Scale by 1/sqrt(s) = 2^-m; RNE once per entry.
    for (auto& v : b.a) {
      fx::detail::U256 t{v < 0 ? fx::u128(-(v + 1)) + 1 : fx::u128(v), 0};
      fx::u128 q = fx::detail::shift_round_even(t, m);
      v = v < 0 ? -fx::i128(q) : fx::i128(q);
    }
  }
  return b;
}

rat::RatMatrix apply(const SparseEmbedding& s, const rat::RatMatrix& a) {
  if (s.cols != a.rows) throw ParameterError("sketch apply: dimension mismatch");
  if (s.identity) return a;
  rat::RatMatrix b(s.rows, a.cols);
  mpq_class scale(1, mpz_class(1) << s.scale_shift());
  for (int col = 0; col < s.cols; ++col)
    for (int k = 0; k < s.s; ++k) {
      int r = s.row_index[col][k];
      mpq_class sg = s.sign[col][k];
      for (int j = 0; j < a.cols; ++j) b(r, j) += sg * scale * a(col, j);
    }
  return b;
}

std::string to_json(const SparseEmbedding& s) {
  json j;
  j["rows"] = s.rows;
  j["cols"] = s.cols;
  j["s"] = s.s;
  j["identity"] = s.identity;
  if (!s.identity) {
    j["row_index"] = s.row_index;
    json signs = json::array();
    for (const auto& col : s.sign) {
      json c = json::array();
      for (auto v : col) c.push_back(static_cast<int>(v));
      signs.push_back(std::move(c));
    }
    j["sign"] = std::move(signs);
  }
  return j.dump();
}

SparseEmbedding embedding_from_json(const std::string& text) {
  json j = json::parse(text);
  SparseEmbedding s;
  s.rows = j.at("rows").get<int>();
  s.cols = j.at("cols").get<int>();
  s.s = j.at("s").get<int>();
  s.identity = j.at("identity").get<bool>();
  if (!s.identity) {
    s.row_index = j.at("row_index").get<std::vector<std::vector<int>>>();
    for (const auto& col : j.at("sign")) {
      std::vector<signed char> c;
      for (const auto& v : col) c.push_back(static_cast<signed char>(v.get<int>()));
      s.sign.push_back(std::move(c));
    }
  }
  return s;
}

namespace {

// Check that 1/(1-eps1) equals 1 + 2^k for some integer k; returns k.
int one_plus_power_of_two_shift(double eps1) {
  mpq_class e(eps1);
  mpq_class inv = 1 / (1 - e);
  mpq_class rest = inv - 1;
  if (rest <= 0) throw ParameterError("spectral_preconditioner: eps1 out of range");
  // rest must be 2^k (possibly negative k).
  mpz_class num = rest.get_num(), den = rest.get_den();
  auto pow2 = [](const mpz_class& z) {
    return mpz_scan1(z.get_mpz_t(), 0) == mpz_sizeinbase(z.get_mpz_t(), 2) - 1;
  };
  if (num == 1 && pow2(den)) return -static_cast<int>(mpz_sizeinbase(den.get_mpz_t(), 2) - 1);
  if (den == 1 && pow2(num)) return static_cast<int>(mpz_sizeinbase(num.get_mpz_t(), 2) - 1);
  throw ParameterError("spectral_preconditioner: 1/(1-eps1) must be one plus a power of two");
}

}  // namespace

Preconditioner spectral_preconditioner(const FxMatrix& a, double eps1, std::uint64_t seed) {
  int shift = one_plus_power_of_two_shift(eps1);
  const int n = a.rows, d = a.cols;
  const double delta = 0.05;
  SparseEmbedding s = sparse_embedding(n, d, eps1, delta, seed);
  FxMatrix sa = apply(s, a);

  FxVector ones(sa.rows, a.ctx);
  for (auto& v : ones.x) v = fx::i128(1) << a.ctx.frac_bits;
  FxMatrix g = fx::gram_weighted(sa, ones, a.ctx);

  // M = (1 + 2^shift) * S^T S gram; the power-of-two part is an exact shift.
  Preconditioner p;
  p.identity_sketch = s.identity;
  p.m = FxMatrix(d, d, a.ctx);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      fx::i128 base = g(i, j);
      fx::i128 extra;
      if (shift >= 0) {
        extra = base << shift;
      } else {
        fx::detail::U256 t{base < 0 ? fx::u128(-(base + 1)) + 1 : fx::u128(base), 0};
        fx::u128 q = fx::detail::shift_round_even(t, -shift);
        extra = base < 0 ? -fx::i128(q) : fx::i128(q);
      }
      p.m(i, j) = fx::Narrow::add(base, extra);
    }
  p.lambda = (1 + eps1) / (1 - eps1);
  return p;
}

rat::RatVector leverage_scores_exact(const rat::RatMatrix& a) {
  rat::RatMatrix g = rat::matmul(rat::transpose(a), a);
  rat::RatMatrix ginv;
  try {
    ginv = rat::exact_inverse(g);
  } catch (const SingularMatrixError& e) {
    throw SingularMatrixError("leverage_scores: A^T A is rank deficient", e.pivot_column());
  }
  rat::RatVector tau(a.rows);
  for (int i = 0; i < a.rows; ++i) {
    mpq_class s = 0;
    for (int j = 0; j < a.cols; ++j)
      for (int k = 0; k < a.cols; ++k) s += a(i, j) * ginv(j, k) * a(i, k);
    tau[i] = s;
  }
  return tau;
}

std::vector<double> leverage_scores(const FxMatrix& a) {
  rat::RatVector tau = leverage_scores_exact(rat::from_fx(a));
  std::vector<double> out(tau.size());
  for (size_t i = 0; i < tau.size(); ++i) out[i] = tau[i].get_d();
  return out;
}

RefineResult undersample_refine(const FxMatrix& a, const LeverageEstimate& est, double beta,
                                std::uint64_t seed) {
  const int n = a.rows, d = a.cols;
  if (static_cast<int>(est.u.size()) != n)
    throw ParameterError("undersample_refine: estimate length mismatch");
  if (!(est.alpha > 0 && est.alpha <= 1)) throw ParameterError("undersample_refine: alpha in (0,1]");
  if (beta < 0) throw ParameterError("undersample_refine: beta must be nonnegative");

  CounterRng rng(seed, /*stream=*/3);
  const double logd = std::log(std::max(2, d));
  std::vector<int> sampled;
  for (int i = 0; i < n; ++i) {
    double pr = std::min(1.0, est.c * est.u[i] * est.alpha * logd);
    if (rng.next_double() < pr) sampled.push_back(i);
  }
  RefineResult res;
  res.sampled_rows = static_cast<int>(sampled.size());
  if (sampled.empty()) {
    res.u = est.u;
    res.empty_sample = true;
    return res;
  }

  // Gram of the sampled rows in long double; generalized leverage through the
  // eigendecomposition pseudoinverse (cutoff 1e-10 * lambda_max).
  num::LMat al = num::to_lmat(a);
  num::LMat g(d, d);
  for (int idx : sampled)
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k) g(j, k) += al(idx, j) * al(idx, k);
  num::EigenSym eig = num::jacobi_eigen(g);
  long double lmax = eig.values.empty() ? 0.0L : eig.values.back();
  long double cutoff = 1e-10L * lmax;

  res.u.resize(n);
  for (int i = 0; i < n; ++i) {
    // v_i = (1+beta) * a_i^T pinv(G) a_i
    long double tau = 0;
    for (int k = 0; k < d; ++k) {
      if (eig.values[k] <= cutoff || eig.values[k] <= 0) continue;
      long double proj = 0;
      for (int j = 0; j < d; ++j) proj += eig.vectors(j, k) * al(i, j);
      tau += proj * proj / eig.values[k];
    }
    double v = (1.0 + beta) * static_cast<double>(tau);
    res.u[i] = std::min(est.u[i], v);
  }
  return res;
}

}  // namespace bitopt::sketch
