#include "bitopt/invmaint.hpp"

#include <cmath>
#include <sstream>

namespace bitopt::im {

std::string trace_to_csv(const DsTrace& t) {
  std::ostringstream out;
  out << "event,k,tracked_bound,measured_error\n";
  for (const auto& row : t) {
    out << row.event << ',' << row.k << ',' << row.tracked_bound << ',';
    if (std::isnan(row.measured_error))
      out << "";
    else
      out << row.measured_error;
    out << '\n';
  }
  return out.str();
}

namespace detail {

num::LMat lu_inverse(const num::LMat& m) {
  const int n = m.rows;
  num::LMat a = m;
  num::LMat inv(n, n);
  for (int i = 0; i < n; ++i) inv(i, i) = 1.0L;
  for (int k = 0; k < n; ++k) {
    int piv = k;
    long double best = std::fabs(static_cast<double>(a(k, k)));
    for (int i = k + 1; i < n; ++i) {
      long double v = std::fabs(static_cast<double>(a(i, k)));
      if (v > best) {
        best = v;
        piv = i;
      }
    }
    if (best == 0) throw SingularMatrixError("lu_inverse: zero pivot in column " + std::to_string(k), k);
    if (piv != k)
      for (int j = 0; j < n; ++j) {
        std::swap(a.a[size_t(piv) * n + j], a.a[size_t(k) * n + j]);
        std::swap(inv.a[size_t(piv) * n + j], inv.a[size_t(k) * n + j]);
      }
    long double d = a(k, k);
    for (int j = 0; j < n; ++j) {
      a(k, j) /= d;
      inv(k, j) /= d;
    }
    for (int i = 0; i < n; ++i) {
      if (i == k) continue;
      long double f = a(i, k);
      if (f == 0) continue;
      for (int j = 0; j < n; ++j) {
        a(i, j) -= f * a(k, j);
        inv(i, j) -= f * inv(k, j);
      }
    }
  }
  return inv;
}

}  // namespace detail

}  // namespace bitopt::im
