#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "smsl/tensor.hpp"

namespace smsl {

/// Feature maps for pyramid levels l_min..l_max, finest first. Each level
/// halves the spatial size of the previous one; all share a channel count.
template <typename V>
struct BasicLevelSet {
  int l_min = 3;
  std::vector<V> features;

  std::size_t count() const noexcept { return features.size(); }
  int l_max() const noexcept { return l_min + static_cast<int>(features.size()) - 1; }
  bool contains(int level) const noexcept { return level >= l_min && level <= l_max(); }

  const V& at_level(int level) const { return features.at(index_of(level)); }
  V& at_level(int level) { return features.at(index_of(level)); }

  std::size_t index_of(int level) const {
    if (!contains(level)) {
      throw DimensionError("level " + std::to_string(level) + " outside [" + std::to_string(l_min) +
                           ", " + std::to_string(l_max()) + "]");
    }
    return static_cast<std::size_t>(level - l_min);
  }

  std::size_t channels() const { return features.front().shape3().c; }
};

template <typename T>
using LevelSet = BasicLevelSet<Tensor<T>>;

/// Checks the pyramid invariants: at least two levels, a shared channel
/// count, and exact halving between consecutive levels.
template <typename V>
void validate_levels(const BasicLevelSet<V>& levels) {
  if (levels.count() < 2) {
    throw DimensionError("a level set needs at least 2 levels, got " + std::to_string(levels.count()));
  }
  const Shape3 first = levels.features.front().shape3();
  for (std::size_t i = 1; i < levels.count(); ++i) {
    const Shape3 prev = levels.features[i - 1].shape3();
    const Shape3 cur = levels.features[i].shape3();
    if (cur.c != first.c) {
      throw DimensionError("level " + std::to_string(levels.l_min + static_cast<int>(i)) + " has " +
                           std::to_string(cur.c) + " channels, expected " + std::to_string(first.c));
    }
    if (prev.h != 2 * cur.h || prev.w != 2 * cur.w) {
      throw DimensionError("level " + std::to_string(levels.l_min + static_cast<int>(i)) +
                           " is not half the size of the level below it");
    }
  }
}

/// Shapes of a pyramid whose finest level (l_min) is c x h x w.
inline std::vector<Shape3> pyramid_shapes(std::size_t levels, std::size_t c, std::size_t h, std::size_t w) {
  std::vector<Shape3> out;
  for (std::size_t i = 0; i < levels; ++i) {
    const std::size_t f = std::size_t{1} << i;
    if (h % f != 0 || w % f != 0) {
      throw DimensionError("base size " + std::to_string(h) + "x" + std::to_string(w) +
                           " cannot be halved " + std::to_string(levels - 1) + " times");
    }
    out.emplace_back(c, h / f, w / f);
  }
  return out;
}

}  // namespace smsl
