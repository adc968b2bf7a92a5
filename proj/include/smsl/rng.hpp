#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "smsl/tensor.hpp"

namespace smsl {

/// Seeded generator with a platform-independent output sequence.
///
/// The engine is std::mt19937_64, whose output is fixed by the C++ standard.
/// Standard distributions are implementation-defined, so reals are derived
/// directly from the raw 64-bit draws: u = (draw >> 11) * 2^-53, u in [0, 1).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  template <typename T>
  Tensor<T> uniform_tensor(Shape shape, double lo, double hi) {
    std::vector<T> v(volume(shape));
    for (auto& x : v) x = static_cast<T>(uniform(lo, hi));
    return Tensor<T>(std::move(shape), std::move(v));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace smsl
