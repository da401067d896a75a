#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace mgrl {

// Dense row-major tables used for every tabular object in the library
// (transition tensors, policies, q/m tables, sampling distributions).
// Kept deliberately tiny: shape + flat storage + checked construction.

struct Table2 {
  int d0 = 0, d1 = 0;
  std::vector<double> v;

  Table2() = default;
  Table2(int a, int b, double fill = 0.0)
      : d0(a), d1(b), v(static_cast<std::size_t>(a) * b, fill) {}

  double& at(int i, int j) { return v[static_cast<std::size_t>(i) * d1 + j]; }
  double at(int i, int j) const {
    return v[static_cast<std::size_t>(i) * d1 + j];
  }
  double* row(int i) { return v.data() + static_cast<std::size_t>(i) * d1; }
  const double* row(int i) const {
    return v.data() + static_cast<std::size_t>(i) * d1;
  }
  std::size_t size() const { return v.size(); }
};

struct Table3 {
  int d0 = 0, d1 = 0, d2 = 0;
  std::vector<double> v;

  Table3() = default;
  Table3(int a, int b, int c, double fill = 0.0)
      : d0(a), d1(b), d2(c),
        v(static_cast<std::size_t>(a) * b * c, fill) {}

  double& at(int i, int j, int k) {
    return v[(static_cast<std::size_t>(i) * d1 + j) * d2 + k];
  }
  double at(int i, int j, int k) const {
    return v[(static_cast<std::size_t>(i) * d1 + j) * d2 + k];
  }
  double* row(int i, int j) {
    return v.data() + (static_cast<std::size_t>(i) * d1 + j) * d2;
  }
  const double* row(int i, int j) const {
    return v.data() + (static_cast<std::size_t>(i) * d1 + j) * d2;
  }
  std::size_t size() const { return v.size(); }

  bool same_shape(const Table3& o) const {
    return d0 == o.d0 && d1 == o.d1 && d2 == o.d2;
  }
};

struct Table4 {
  int d0 = 0, d1 = 0, d2 = 0, d3 = 0;
  std::vector<double> v;

  Table4() = default;
  Table4(int a, int b, int c, int d, double fill = 0.0)
      : d0(a), d1(b), d2(c), d3(d),
        v(static_cast<std::size_t>(a) * b * c * d, fill) {}

  double& at(int i, int j, int k, int l) {
    return v[((static_cast<std::size_t>(i) * d1 + j) * d2 + k) * d3 + l];
  }
  double at(int i, int j, int k, int l) const {
    return v[((static_cast<std::size_t>(i) * d1 + j) * d2 + k) * d3 + l];
  }
  std::size_t size() const { return v.size(); }
};

inline double sup_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

inline double sup_diff(const std::vector<double>& a,
                       const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("sup_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace mgrl
