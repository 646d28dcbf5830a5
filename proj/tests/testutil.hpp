#pragma once

#include <cmath>
#include <vector>

#include "sac/rng.hpp"
#include "sac/tensor.hpp"

namespace sactest {

inline double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

inline double max_abs_diff(std::span<const float> a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

inline bool bits_equal(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;  // NaN-free data by construction
  return true;
}

inline sac::Tensor random_tensor(const sac::Shape& shape, sac::Rng& rng, bool requires_grad = false,
                                 double stdev = 1.0) {
  return sac::Tensor::randn(shape, rng, stdev, requires_grad);
}

}  // namespace sactest
