// SPDX-License-Identifier: Apache-2.0
#include "cassi/tensor.hpp"

#include <cmath>
#include <limits>

namespace cassi {

double tensor_min(const Tensor& t) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < t.size(); ++i) m = std::min(m, t[i]);
  return m;
}

double tensor_max(const Tensor& t) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < t.size(); ++i) m = std::max(m, t[i]);
  return m;
}

double tensor_abs_mean(const Tensor& t) {
  if (t.size() == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += std::fabs(t[i]);
  return s / static_cast<double>(t.size());
}

double tensor_dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double tensor_sq_norm(const Tensor& t) { return tensor_dot(t, t); }

bool tensor_all_finite(const Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t[i])) return false;
  return true;
}

double tensor_max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace cassi
