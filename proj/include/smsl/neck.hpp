#pragma once

// Selective multi-scale learning neck.
//
//   gather            resize every level to the gather level's size
//   channel_rescale   concat, GAP, FC-ReLU-FC-sigmoid gate, channel scaling, split
//   selective_combine sum levels, GAP, FC-LN-ReLU, FC to an [L, C] logit matrix,
//                     softmax across levels, per-channel weighted sum
//   nonlocal_refine   embedded-Gaussian self-attention with residual
//   fuse_and_scatter  add the global feature, resize back, add the input level
//
// Every stage is written once against a value type V that is either a
// Tensor<T> (plain evaluation) or a Var<T> (taped evaluation), so the
// differentiated graph is exactly the evaluated one.

#include <cmath>
#include <cstddef>
#include <exception>
#include <span>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include "smsl/autodiff.hpp"
#include "smsl/kernels.hpp"
#include "smsl/level_set.hpp"
#include "smsl/params.hpp"

namespace smsl {

template <typename V>
struct scalar_of;
template <typename T>
struct scalar_of<Tensor<T>> {
  using type = T;
};
template <typename T>
struct scalar_of<Var<T>> {
  using type = T;
};
template <typename V>
using scalar_of_t = typename scalar_of<V>::type;

template <typename T>
const Tensor<T>& to_tensor(const Tensor<T>& t) {
  return t;
}
template <typename T>
const Tensor<T>& to_tensor(const Var<T>& v) {
  return v.value();
}

struct SmslConfig {
  int gather_level = 5;
  std::size_t r = 8;
  double ln_eps = 1e-5;
  DType dtype = DType::F64;
};

/// Gather level floor((l_min + l_max) / 2); levels are non-negative.
inline int default_gather_level(int l_min, int l_max) { return (l_min + l_max) / 2; }

template <typename V>
SmslConfig default_config(const BasicLevelSet<V>& levels, std::size_t r) {
  SmslConfig cfg;
  cfg.gather_level = default_gather_level(levels.l_min, levels.l_max());
  cfg.r = r;
  cfg.dtype = dtype_of<scalar_of_t<V>>();
  return cfg;
}

/// Intermediates captured during a plain forward, for invariant checks.
template <typename T>
struct ForwardTrace {
  std::vector<Tensor<T>> gathered;   // D^l
  Tensor<T> gate;                    // s, length L*C
  std::vector<Tensor<T>> rescaled;   // Q^l
  std::vector<Tensor<T>> attention;  // [L, C] per branch: locals finest first, then global
  Tensor<T> global_feature;          // F^g
  Tensor<T> refined_global;          // G
};

template <typename T>
struct ForwardOptions {
  unsigned threads = 1;  // workers for the L + 1 combination branches
  ForwardTrace<T>* trace = nullptr;
};

namespace detail {

// Rethrows a library error with the failing stage prepended, keeping its type.
template <typename Fn>
decltype(auto) in_stage(const char* stage, Fn&& fn) {
  auto tag = [&](const Error& e) { return std::string(stage) + ": " + e.what(); };
  try {
    return fn();
  } catch (const DimensionError& e) {
    throw DimensionError(tag(e));
  } catch (const UnsupportedResizeError& e) {
    throw UnsupportedResizeError(tag(e));
  } catch (const ConfigError& e) {
    throw ConfigError(tag(e));
  } catch (const NumericError& e) {
    throw NumericError(tag(e));
  }
}

template <typename V>
V column(const V& x) {
  return reshape(x, Shape{x.shape()[0], 1});
}

template <typename V>
V flatten(const V& x) {
  return reshape(x, Shape{volume(x.shape())});
}

}  // namespace detail

/// C6 and C7 from C5 by two 3x3 stride-2 convolutions with padding 1.
template <typename V>
std::pair<V, V> make_extra_levels(const V& c5, const std::array<V, 2>& convs) {
  const Shape3 s = c5.shape3();
  if (s.h % 4 != 0 || s.w % 4 != 0) {
    throw DimensionError("make_extra_levels: C5 spatial size " + std::to_string(s.h) + "x" +
                         std::to_string(s.w) + " is not divisible by 4");
  }
  V c6 = conv2d(c5, convs[0], 2, 1);
  V c7 = conv2d(c6, convs[1], 2, 1);
  return {std::move(c6), std::move(c7)};
}

/// Resizes every level to the gather level's spatial size (D^l), finest first.
template <typename V>
std::vector<V> gather(const BasicLevelSet<V>& levels, const SmslConfig& cfg) {
  if (!levels.contains(cfg.gather_level)) {
    throw ConfigError("gather level " + std::to_string(cfg.gather_level) + " outside [" +
                      std::to_string(levels.l_min) + ", " + std::to_string(levels.l_max()) + "]");
  }
  const Shape3 target = levels.at_level(cfg.gather_level).shape3();
  std::vector<V> out;
  out.reserve(levels.count());
  for (const V& f : levels.features) out.push_back(resize(f, target.h, target.w));
  return out;
}

/// Sigmoid channel gate over the concatenated levels; returns Q^l per level.
template <typename V>
std::vector<V> channel_rescale(std::span<const V> d, const BasicCrParams<V>& p,
                               Tensor<scalar_of_t<V>>* gate_out = nullptr) {
  if (d.empty()) throw DimensionError("channel_rescale needs at least one level");
  for (const V& x : d) {
    if (x.shape() != d.front().shape()) throw DimensionError("channel_rescale: level shapes differ");
  }
  const std::size_t lc = d.size() * d.front().shape3().c;
  if (p.w1.shape().size() != 2 || p.w1.shape()[1] != lc || p.w2.shape() != Shape{lc, p.w1.shape()[0]}) {
    throw DimensionError("channel_rescale: gate weights do not match L*C=" + std::to_string(lc));
  }
  const V stacked = concat_channels(d);
  const V pooled = detail::column(global_avg_pool(stacked));
  const V hidden = activation(matmul(p.w1, pooled), Activation::Relu);
  const V gate = detail::flatten(activation(matmul(p.w2, hidden), Activation::Sigmoid));
  if (gate_out) *gate_out = to_tensor(gate);
  return split_channels(scale_channels(stacked, gate), d.size());
}

template <typename V>
std::vector<V> channel_rescale(const std::vector<V>& d, const BasicCrParams<V>& p,
                               Tensor<scalar_of_t<V>>* gate_out = nullptr) {
  return channel_rescale(std::span<const V>(d), p, gate_out);
}

/// Per-channel softmax attention across levels followed by the weighted sum.
/// Logits are laid out level-major: M[i, c] = U[i * C + c].
template <typename V>
V selective_combine(std::span<const V> q, const BasicSfcBranch<V>& branch, double eps,
                    Tensor<scalar_of_t<V>>* attention_out = nullptr) {
  using T = scalar_of_t<V>;
  if (q.empty()) throw DimensionError("selective_combine needs at least one level");
  for (const V& x : q) {
    if (x.shape() != q.front().shape()) throw DimensionError("selective_combine: level shapes differ");
  }
  const std::size_t levels = q.size();
  const std::size_t c = q.front().shape3().c;
  const auto& ws = branch.w.shape();
  if (ws.size() != 2 || ws[1] != c || branch.v.shape() != Shape{levels * c, ws[0]}) {
    throw DimensionError("selective_combine: branch weights do not match L=" + std::to_string(levels) +
                         ", C=" + std::to_string(c));
  }
  V summed = q[0];
  for (std::size_t i = 1; i < levels; ++i) summed = add(summed, q[i]);
  const V context = detail::column(global_avg_pool(summed));
  const V compact = activation(
      layer_norm(detail::flatten(matmul(branch.w, context)), branch.ln_gamma, branch.ln_beta, static_cast<T>(eps)),
      Activation::Relu);
  const V logits = reshape(matmul(branch.v, detail::column(compact)), Shape{levels, c});
  const V attention = softmax_over_levels(logits);
  if (attention_out) *attention_out = to_tensor(attention);

  // Row i of the attention matrix as a length-C gate on Q^i.
  const std::vector<V> rows = split_channels(reshape(attention, Shape{levels * c, 1, 1}), levels);
  V out = scale_channels(q[0], reshape(rows[0], Shape{c}));
  for (std::size_t i = 1; i < levels; ++i) out = add(out, scale_channels(q[i], reshape(rows[i], Shape{c})));
  return out;
}

template <typename V>
V selective_combine(const std::vector<V>& q, const BasicSfcBranch<V>& branch, double eps,
                    Tensor<scalar_of_t<V>>* attention_out = nullptr) {
  return selective_combine(std::span<const V>(q), branch, eps, attention_out);
}

/// Embedded-Gaussian non-local block. With N = H*W positions and E = C/2
/// embedding channels, position i aggregates
///   y_i = sum_j softmax_j(theta_i . phi_j / sqrt(E)) g_j
/// and the block returns fg + w_z * y.
template <typename V>
V nonlocal_refine(const V& fg, const BasicNonLocal<V>& p) {
  using T = scalar_of_t<V>;
  const Shape3 s = fg.shape3();
  if (s.c % 2 != 0) throw ConfigError("nonlocal_refine needs an even channel count, got " + std::to_string(s.c));
  const std::size_t e = s.c / 2, n = s.plane();
  const V theta = reshape(conv2d(fg, p.theta, 1, 0), Shape{e, n});
  const V phi = reshape(conv2d(fg, p.phi, 1, 0), Shape{e, n});
  const V g = reshape(conv2d(fg, p.g, 1, 0), Shape{e, n});
  // logits[j, i] = phi_j . theta_i; the softmax runs down each column, i.e. over j.
  const V logits = scale(matmul(transpose(phi), theta), static_cast<T>(1.0 / std::sqrt(static_cast<double>(e))));
  const V weights = softmax_over_levels(logits);
  const V y = reshape(matmul(g, weights), Shape{e, s.h, s.w});
  return add(fg, conv2d(y, p.w_z, 1, 0));
}

/// Adds G to every local feature, resizes each back to its level and adds
/// the original input of that level.
template <typename V>
BasicLevelSet<V> fuse_and_scatter(std::span<const V> f_local, const V& g_feat, const BasicLevelSet<V>& levels) {
  if (f_local.size() != levels.count()) {
    throw DimensionError("fuse_and_scatter: " + std::to_string(f_local.size()) + " local features for " +
                         std::to_string(levels.count()) + " levels");
  }
  BasicLevelSet<V> out;
  out.l_min = levels.l_min;
  out.features.reserve(levels.count());
  for (std::size_t i = 0; i < levels.count(); ++i) {
    const Shape3 s = levels.features[i].shape3();
    const V fused = add(f_local[i], g_feat);
    out.features.push_back(add(resize(fused, s.h, s.w), levels.features[i]));
  }
  return out;
}

template <typename V>
BasicLevelSet<V> fuse_and_scatter(const std::vector<V>& f_local, const V& g_feat, const BasicLevelSet<V>& levels) {
  return fuse_and_scatter(std::span<const V>(f_local), g_feat, levels);
}

/// Full neck. Output levels have the same shapes as the input levels.
template <typename V>
BasicLevelSet<V> smsl_forward(const BasicLevelSet<V>& levels, const BasicSmslParams<V>& params,
                              const SmslConfig& cfg, const ForwardOptions<scalar_of_t<V>>& opt = {}) {
  using T = scalar_of_t<V>;
  detail::in_stage("levels", [&] { validate_levels(levels); });
  detail::in_stage("params", [&] { validate_params(params); });
  if (params.L != levels.count() || params.C != levels.channels()) {
    throw DimensionError("params built for L=" + std::to_string(params.L) + ", C=" + std::to_string(params.C) +
                         " but levels have L=" + std::to_string(levels.count()) +
                         ", C=" + std::to_string(levels.channels()));
  }
  if (cfg.r != params.r) throw ConfigError("config r differs from params r");

  ForwardTrace<T>* trace = opt.trace;
  const std::size_t L = levels.count();
  const std::vector<V> d = detail::in_stage("gather", [&] { return gather(levels, cfg); });
  Tensor<T> gate;
  const std::vector<V> q = detail::in_stage("channel_rescale", [&] { return channel_rescale(d, params.cr, &gate); });

  // Branches 0..L-1 are the local combinations, branch L the global one.
  std::vector<V> branch_out(L + 1);
  std::vector<Tensor<T>> attention(L + 1);
  V refined{};
  auto run_branch = [&](std::size_t k) {
    if (k < L) {
      branch_out[k] = selective_combine(q, params.sfc_local[k], cfg.ln_eps, &attention[k]);
    } else {
      branch_out[L] = selective_combine(q, params.sfc_global, cfg.ln_eps, &attention[L]);
      refined = nonlocal_refine(branch_out[L], params.nonlocal);
    }
  };

  const std::size_t workers = std::is_same_v<V, Tensor<T>> ? std::min<std::size_t>(opt.threads, L + 1) : 1;
  detail::in_stage("selective_combine", [&] {
    if (workers <= 1) {
      for (std::size_t k = 0; k <= L; ++k) run_branch(k);
      return;
    }
    std::vector<std::exception_ptr> errors(L + 1);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t k = w; k <= L; k += workers) {
          try {
            run_branch(k);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  });

  if (trace) {
    trace->gathered.clear();
    trace->rescaled.clear();
    for (const V& x : d) trace->gathered.push_back(to_tensor(x));
    for (const V& x : q) trace->rescaled.push_back(to_tensor(x));
    trace->gate = gate;
    trace->attention = attention;
    trace->global_feature = to_tensor(branch_out[L]);
    trace->refined_global = to_tensor(refined);
  }

  const std::span<const V> locals(branch_out.data(), L);
  return detail::in_stage("fuse_and_scatter", [&] { return fuse_and_scatter(locals, refined, levels); });
}

/// Records parameters as tape leaves.
template <typename T>
BasicSmslParams<Var<T>> params_on_tape(Tape<T>& tape, const SmslParams<T>& p) {
  return map_params(p, [&](const Tensor<T>& t) { return tape.leaf(t); });
}

template <typename T>
BasicLevelSet<Var<T>> levels_on_tape(Tape<T>& tape, const LevelSet<T>& levels) {
  BasicLevelSet<Var<T>> out;
  out.l_min = levels.l_min;
  for (const auto& f : levels.features) out.features.push_back(tape.leaf(f));
  return out;
}

/// Scalar loss used for gradient checks: the sum of every output element.
template <typename T>
Var<T> sum_of_outputs(const BasicLevelSet<Var<T>>& out) {
  Var<T> total = sum_all(out.features[0]);
  for (std::size_t i = 1; i < out.count(); ++i) total = add(total, sum_all(out.features[i]));
  return total;
}

}  // namespace smsl
