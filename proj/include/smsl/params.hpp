#pragma once

// Learnable weights of the neck, generic over the value type so the same
// structure holds plain tensors or tape leaves.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <string>
#include <vector>

#include "smsl/rng.hpp"
#include "smsl/tensor.hpp"

namespace smsl {

/// Channel-rescaling gate: s = sigmoid(w2 relu(w1 x)).
template <typename V>
struct BasicCrParams {
  V w1;  // [LC/r, LC]
  V w2;  // [LC, LC/r]
};

/// One selective-combination branch.
template <typename V>
struct BasicSfcBranch {
  V w;         // [C/r, C] compaction
  V ln_gamma;  // [C/r]
  V ln_beta;   // [C/r]
  V v;         // [LC, C/r] expansion
};

/// Embedded-Gaussian non-local block with C/2 embedding channels.
template <typename V>
struct BasicNonLocal {
  V theta;  // [C/2, C, 1, 1]
  V phi;    // [C/2, C, 1, 1]
  V g;      // [C/2, C, 1, 1]
  V w_z;    // [C, C/2, 1, 1]
};

template <typename V>
struct BasicSmslParams {
  std::size_t L = 0;
  std::size_t C = 0;
  std::size_t r = 1;
  std::uint64_t seed = 0;
  BasicCrParams<V> cr;
  std::vector<BasicSfcBranch<V>> sfc_local;  // one per target level, finest first
  BasicSfcBranch<V> sfc_global;
  BasicNonLocal<V> nonlocal;
  std::optional<std::array<V, 2>> extra;  // 3x3 stride-2 generators for C6 and C7
};

template <typename T>
using SmslParams = BasicSmslParams<Tensor<T>>;

/// Visits every tensor in manifest order with its dotted key.
template <typename P, typename Fn>
void for_each_param(P& p, Fn&& fn) {
  fn("cr.w1", p.cr.w1);
  fn("cr.w2", p.cr.w2);
  auto branch = [&](const std::string& prefix, auto& b) {
    fn(prefix + ".w", b.w);
    fn(prefix + ".ln_gamma", b.ln_gamma);
    fn(prefix + ".ln_beta", b.ln_beta);
    fn(prefix + ".v", b.v);
  };
  for (std::size_t i = 0; i < p.sfc_local.size(); ++i) branch("sfc_local." + std::to_string(i), p.sfc_local[i]);
  branch("sfc_global", p.sfc_global);
  fn("nonlocal.theta", p.nonlocal.theta);
  fn("nonlocal.phi", p.nonlocal.phi);
  fn("nonlocal.g", p.nonlocal.g);
  fn("nonlocal.w_z", p.nonlocal.w_z);
  if (p.extra) {
    fn("extra.c6", (*p.extra)[0]);
    fn("extra.c7", (*p.extra)[1]);
  }
}

/// Rebuilds the parameter structure with every tensor passed through `fn`.
template <typename A, typename Fn>
auto map_params(const BasicSmslParams<A>& p, Fn&& fn) {
  using B = decltype(fn(std::declval<const A&>()));
  auto branch = [&](const BasicSfcBranch<A>& b) {
    return BasicSfcBranch<B>{fn(b.w), fn(b.ln_gamma), fn(b.ln_beta), fn(b.v)};
  };
  BasicSmslParams<B> out;
  out.L = p.L;
  out.C = p.C;
  out.r = p.r;
  out.seed = p.seed;
  out.cr = {fn(p.cr.w1), fn(p.cr.w2)};
  for (const auto& b : p.sfc_local) out.sfc_local.push_back(branch(b));
  out.sfc_global = branch(p.sfc_global);
  out.nonlocal = {fn(p.nonlocal.theta), fn(p.nonlocal.phi), fn(p.nonlocal.g), fn(p.nonlocal.w_z)};
  if (p.extra) out.extra = std::array<B, 2>{fn((*p.extra)[0]), fn((*p.extra)[1])};
  return out;
}

template <typename U, typename T>
SmslParams<U> cast_params(const SmslParams<T>& p) {
  return map_params(p, [](const Tensor<T>& t) { return t.template cast<U>(); });
}

inline void check_structure(std::size_t L, std::size_t C, std::size_t r) {
  if (L < 2) throw ConfigError("L must be >= 2, got " + std::to_string(L));
  if (C < 2 || C % 2 != 0) throw ConfigError("C must be even and >= 2, got " + std::to_string(C));
  if (r < 1 || C % r != 0) {
    throw ConfigError("reduction ratio r=" + std::to_string(r) + " must divide C=" + std::to_string(C));
  }
  if ((L * C) % r != 0) throw ConfigError("reduction ratio r must divide L*C");
}

/// Expected shape of every parameter tensor for (L, C, r).
inline std::vector<std::pair<std::string, Shape>> expected_shapes(std::size_t L, std::size_t C, std::size_t r,
                                                                  bool extra) {
  check_structure(L, C, r);
  const std::size_t lc = L * C, red = C / r, half = C / 2;
  std::vector<std::pair<std::string, Shape>> out{{"cr.w1", {lc / r, lc}}, {"cr.w2", {lc, lc / r}}};
  auto branch = [&](const std::string& prefix) {
    out.push_back({prefix + ".w", {red, C}});
    out.push_back({prefix + ".ln_gamma", {red}});
    out.push_back({prefix + ".ln_beta", {red}});
    out.push_back({prefix + ".v", {lc, red}});
  };
  for (std::size_t i = 0; i < L; ++i) branch("sfc_local." + std::to_string(i));
  branch("sfc_global");
  out.push_back({"nonlocal.theta", {half, C, 1, 1}});
  out.push_back({"nonlocal.phi", {half, C, 1, 1}});
  out.push_back({"nonlocal.g", {half, C, 1, 1}});
  out.push_back({"nonlocal.w_z", {C, half, 1, 1}});
  if (extra) {
    out.push_back({"extra.c6", {C, C, 3, 3}});
    out.push_back({"extra.c7", {C, C, 3, 3}});
  }
  return out;
}

/// Throws DimensionError unless every tensor matches the (L, C, r) layout.
template <typename V>
void validate_params(const BasicSmslParams<V>& p) {
  check_structure(p.L, p.C, p.r);
  if (p.sfc_local.size() != p.L) {
    throw DimensionError("expected " + std::to_string(p.L) + " local branches, got " +
                         std::to_string(p.sfc_local.size()));
  }
  const auto want = expected_shapes(p.L, p.C, p.r, p.extra.has_value());
  std::size_t i = 0;
  for_each_param(p, [&](const std::string& key, const V& t) {
    if (t.shape() != want[i].second) {
      throw DimensionError("parameter " + key + " has shape " + to_string(t.shape()) + ", expected " +
                           to_string(want[i].second));
    }
    ++i;
  });
}

/// Draws every weight from uniform(-a, a), a = sqrt(6 / fan_in), in manifest
/// order from one Rng(seed). Layer-norm gains are 1 and offsets 0.
template <typename T>
SmslParams<T> init_params(std::size_t L, std::size_t C, std::size_t r, std::uint64_t seed, bool extra_convs) {
  const auto shapes = expected_shapes(L, C, r, extra_convs);
  Rng rng(seed);
  SmslParams<T> p;
  p.L = L;
  p.C = C;
  p.r = r;
  p.seed = seed;
  p.sfc_local.resize(L);
  if (extra_convs) p.extra.emplace();
  std::size_t i = 0;
  for_each_param(p, [&](const std::string& key, Tensor<T>& t) {
    const Shape& s = shapes[i++].second;
    if (key.ends_with(".ln_gamma")) {
      t = Tensor<T>::full(s, T{1});
    } else if (key.ends_with(".ln_beta")) {
      t = Tensor<T>::zeros(s);
    } else {
      // FC [out, in] and conv [out, in, k, k]: fan_in excludes the leading extent.
      const double fan_in = static_cast<double>(volume(s) / s[0]);
      const double a = std::sqrt(6.0 / fan_in);
      t = rng.uniform_tensor<T>(s, -a, a);
    }
  });
  return p;
}

struct ParamCount {
  std::size_t cr = 0;
  std::size_t sfc_local = 0;  // all local branches together
  std::size_t sfc_branch = 0;  // one branch
  std::size_t sfc_global = 0;
  std::size_t nonlocal = 0;
  std::size_t extra = 0;
  std::size_t total = 0;
};

namespace detail {

inline void tally(ParamCount& n, const std::string& key, std::size_t k) {
  if (key.starts_with("cr.")) {
    n.cr += k;
  } else if (key.starts_with("sfc_local.")) {
    n.sfc_local += k;
    if (key.starts_with("sfc_local.0.")) n.sfc_branch += k;
  } else if (key.starts_with("sfc_global.")) {
    n.sfc_global += k;
  } else if (key.starts_with("nonlocal.")) {
    n.nonlocal += k;
  } else {
    n.extra += k;
  }
}

}  // namespace detail

template <typename V>
ParamCount count_params(const BasicSmslParams<V>& p) {
  ParamCount n;
  for_each_param(p, [&](const std::string& key, const V& t) {
    detail::tally(n, key, volume(t.shape()));
  });
  n.total = n.cr + n.sfc_local + n.sfc_global + n.nonlocal + n.extra;
  return n;
}

/// Count derived from (L, C, r) alone, without materializing tensors.
inline ParamCount count_params(std::size_t L, std::size_t C, std::size_t r, bool extra_convs) {
  ParamCount n;
  for (const auto& [key, s] : expected_shapes(L, C, r, extra_convs)) {
    detail::tally(n, key, volume(s));
  }
  n.total = n.cr + n.sfc_local + n.sfc_global + n.nonlocal + n.extra;
  return n;
}

}  // namespace smsl
