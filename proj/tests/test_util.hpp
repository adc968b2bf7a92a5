#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>

#include "smsl/rng.hpp"
#include "smsl/tensor.hpp"

namespace smsl::testing {

inline Tensor<double> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return rng.uniform_tensor<double>(std::move(s), lo, hi);
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace smsl::testing
