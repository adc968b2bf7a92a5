#pragma once

// Reverse-mode differentiation over the smsl kernels.
//
// A Tape is an append-only list of nodes. Each node names a kernel (OpKind),
// references earlier nodes as inputs, stores its attributes and its forward
// value. Every OpKind has a registered forward (used for replay) and a VJP.
// Tapes are rebuilt per forward call and are single-threaded.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smsl/kernels.hpp"
#include "smsl/tensor.hpp"

namespace smsl {

enum class OpKind : std::uint8_t {
  Leaf,
  Matmul,
  GlobalAvgPool,
  Activation,
  SoftmaxOverLevels,
  LayerNorm,
  Resize,
  Concat,
  SliceChannels,
  Conv2d,
  Add,
  Mul,
  Scale,
  ScaleChannels,
  Transpose,
  Reshape,
  SumAll,
  Count_
};

inline const char* op_name(OpKind k) {
  static constexpr std::array<const char*, static_cast<std::size_t>(OpKind::Count_)> names{
      "leaf",      "matmul", "global_avg_pool", "activation",     "softmax_over_levels",
      "layer_norm", "resize", "concat_channels", "slice_channels", "conv2d",
      "add",       "mul",    "scale",           "scale_channels", "transpose",
      "reshape",   "sum_all"};
  const auto i = static_cast<std::size_t>(k);
  return i < names.size() ? names[i] : "unknown";
}

/// Non-tensor arguments of a recorded op. Only the fields relevant to the
/// op kind are meaningful.
template <typename T>
struct OpAttrs {
  Activation act = Activation::Relu;
  int stride = 1;
  int pad = 0;
  T scalar{0};  // layer_norm eps, scale factor
  std::size_t begin = 0;
  std::size_t count = 0;
  Shape target;  // resize (h, w) or reshape shape
};

template <typename T>
class Tape;

/// Handle to a node on a specific tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  Shape3 shape3() const { return value().shape3(); }
};

template <typename T>
struct Node {
  OpKind kind = OpKind::Leaf;
  std::vector<std::size_t> inputs;
  OpAttrs<T> attrs;
  Tensor<T> value;
};

namespace detail {

template <typename T>
using ForwardFn = Tensor<T> (*)(std::span<const Tensor<T>* const>, const OpAttrs<T>&);

template <typename T>
using VjpFn = std::vector<Tensor<T>> (*)(std::span<const Tensor<T>* const> in, const Tensor<T>& out,
                                         const OpAttrs<T>&, const Tensor<T>& cot);

template <typename T>
struct OpRule {
  ForwardFn<T> forward = nullptr;
  VjpFn<T> vjp = nullptr;
};

// ---- VJP rules -----------------------------------------------------------

template <typename T>
std::vector<Tensor<T>> vjp_matmul(std::span<const Tensor<T>* const> in, const Tensor<T>&,
                                  const OpAttrs<T>&, const Tensor<T>& v) {
  return {matmul(v, transpose(*in[1])), matmul(transpose(*in[0]), v)};
}

template <typename T>
std::vector<Tensor<T>> vjp_gap(std::span<const Tensor<T>* const> in, const Tensor<T>&,
                               const OpAttrs<T>&, const Tensor<T>& v) {
  const Shape3 s = in[0]->shape3();
  std::vector<T> g(in[0]->size());
  const T inv = T{1} / static_cast<T>(s.plane());
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t i = 0; i < s.plane(); ++i) g[c * s.plane() + i] = v[c] * inv;
  return {Tensor<T>(in[0]->shape(), std::move(g))};
}

template <typename T>
std::vector<Tensor<T>> vjp_activation(std::span<const Tensor<T>* const> in, const Tensor<T>& out,
                                      const OpAttrs<T>& a, const Tensor<T>& v) {
  std::vector<T> g(v.size());
  if (a.act == Activation::Sigmoid) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = v[i] * out[i] * (T{1} - out[i]);
  } else {
    // Derivative at exactly zero is taken as zero.
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (*in[0])[i] > T{0} ? v[i] : T{0};
  }
  return {Tensor<T>(v.shape(), std::move(g))};
}

template <typename T>
std::vector<Tensor<T>> vjp_softmax(std::span<const Tensor<T>* const>, const Tensor<T>& y,
                                   const OpAttrs<T>&, const Tensor<T>& v) {
  const std::size_t rows = y.dim(0), cols = y.dim(1);
  std::vector<T> g(y.size());
  for (std::size_t c = 0; c < cols; ++c) {
    T dot{0};
    for (std::size_t i = 0; i < rows; ++i) dot += y[i * cols + c] * v[i * cols + c];
    for (std::size_t i = 0; i < rows; ++i) g[i * cols + c] = y[i * cols + c] * (v[i * cols + c] - dot);
  }
  return {Tensor<T>(y.shape(), std::move(g))};
}

template <typename T>
std::vector<Tensor<T>> vjp_layer_norm(std::span<const Tensor<T>* const> in, const Tensor<T>&,
                                      const OpAttrs<T>& a, const Tensor<T>& v) {
  const Tensor<T>& x = *in[0];
  const Tensor<T>& gamma = *in[1];
  const std::size_t d = x.size();
  T mean{0};
  for (std::size_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<T>(d);
  T var{0};
  for (std::size_t i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= static_cast<T>(d);
  const T inv = T{1} / std::sqrt(var + a.scalar);

  std::vector<T> xhat(d), gxhat(d), ggamma(d), gx(d);
  T sum_g{0}, sum_gx{0};
  for (std::size_t i = 0; i < d; ++i) {
    xhat[i] = (x[i] - mean) * inv;
    ggamma[i] = v[i] * xhat[i];
    gxhat[i] = v[i] * gamma[i];
    sum_g += gxhat[i];
    sum_gx += gxhat[i] * xhat[i];
  }
  const T n = static_cast<T>(d);
  for (std::size_t i = 0; i < d; ++i) gx[i] = inv / n * (n * gxhat[i] - sum_g - xhat[i] * sum_gx);
  return {Tensor<T>(x.shape(), std::move(gx)), Tensor<T>(x.shape(), std::move(ggamma)), v};
}

template <typename T>
std::vector<Tensor<T>> vjp_resize(std::span<const Tensor<T>* const> in, const Tensor<T>&,
                                  const OpAttrs<T>& a, const Tensor<T>& v) {
  const Tensor<T>& x = *in[0];
  const Shape3 s = x.shape3();
  const std::size_t th = a.target[0], tw = a.target[1];
  const auto mode = classify_resize(s.h, s.w, th, tw);
  if (mode == ResizeMode::Identity) return {v};
  std::vector<T> g(x.size(), T{0});
  if (mode == ResizeMode::Downsample) {
    const std::size_t kh = s.h / th, kw = s.w / tw;
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < th; ++i)
        for (std::size_t j = 0; j < tw; ++j)
          g[pool_argmax(x, c, i, j, kh, kw)] += v[(c * th + i) * tw + j];
  } else {
    auto at = [&](std::size_t c, std::size_t i, std::size_t j) -> T& {
      return g[(c * s.h + i) * s.w + j];
    };
    for (std::size_t i = 0; i < th; ++i) {
      const auto ty = bilinear_taps<T>(i, s.h, th);
      for (std::size_t j = 0; j < tw; ++j) {
        const auto tx = bilinear_taps<T>(j, s.w, tw);
        for (std::size_t c = 0; c < s.c; ++c) {
          const T gv = v[(c * th + i) * tw + j];
          const T top = gv * (T{1} - ty.frac);
          const T bot = gv * ty.frac;
          at(c, ty.lo, tx.lo) += top * (T{1} - tx.frac);
          at(c, ty.lo, tx.hi) += top * tx.frac;
          at(c, ty.hi, tx.lo) += bot * (T{1} - tx.frac);
          at(c, ty.hi, tx.hi) += bot * tx.frac;
        }
      }
    }
  }
  return {Tensor<T>(x.shape(), std::move(g))};
}

template <typename T>
std::vector<Tensor<T>> vjp_concat(std::span<const Tensor<T>* const> in, const Tensor<T>&,
                                  const OpAttrs<T>&, const Tensor<T>& v) {
  std::vector<Tensor<T>> out;
  std::size_t begin = 0;
  for (const Tensor<T>* x : in) {
    out.push_back(slice_channels(v, begin, x->dim(0)));
    begin += x->dim(0);
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> vjp_slice(std::span<const Tensor<T>* const> in, const Tensor<T>&,
                                 const OpAttrs<T>& a, const Tensor<T>& v) {
  const Shape3 s = in[0]->shape3();
  std::vector<T> g(in[0]->size(), T{0});
  std::copy(v.data().begin(), v.data().end(), g.begin() + static_cast<std::ptrdiff_t>(a.begin * s.plane()));
  return {Tensor<T>(in[0]->shape(), std::move(g))};
}

template <typename T>
std::vector<Tensor<T>> vjp_conv2d(std::span<const Tensor<T>* const> in, const Tensor<T>&,
                                  const OpAttrs<T>& a, const Tensor<T>& v) {
  const Tensor<T>& x = *in[0];
  const Tensor<T>& w = *in[1];
  const Shape3 s = x.shape3();
  const std::size_t cout = w.dim(0), k = w.dim(2), oh = v.dim(1), ow = v.dim(2);
  std::vector<T> gx(x.size(), T{0}), gw(w.size(), T{0});
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t oi = 0; oi < oh; ++oi) {
      for (std::size_t oj = 0; oj < ow; ++oj) {
        const T gv = v[(co * oh + oi) * ow + oj];
        for (std::size_t ci = 0; ci < s.c; ++ci) {
          for (std::size_t ki = 0; ki < k; ++ki) {
            const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi) * a.stride +
                                      static_cast<std::ptrdiff_t>(ki) - a.pad;
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(s.h)) continue;
            for (std::size_t kj = 0; kj < k; ++kj) {
              const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj) * a.stride +
                                        static_cast<std::ptrdiff_t>(kj) - a.pad;
              if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(s.w)) continue;
              const std::size_t xi = (ci * s.h + static_cast<std::size_t>(ii)) * s.w +
                                     static_cast<std::size_t>(jj);
              const std::size_t wi = ((co * s.c + ci) * k + ki) * k + kj;
              gx[xi] += w[wi] * gv;
              gw[wi] += x[xi] * gv;
            }
          }
        }
      }
    }
  }
  return {Tensor<T>(x.shape(), std::move(gx)), Tensor<T>(w.shape(), std::move(gw))};
}

template <typename T>
std::vector<Tensor<T>> vjp_add(std::span<const Tensor<T>* const>, const Tensor<T>&,
                               const OpAttrs<T>&, const Tensor<T>& v) {
  return {v, v};
}

template <typename T>
std::vector<Tensor<T>> vjp_mul(std::span<const Tensor<T>* const> in, const Tensor<T>&,
                               const OpAttrs<T>&, const Tensor<T>& v) {
  return {mul(v, *in[1]), mul(v, *in[0])};
}

template <typename T>
std::vector<Tensor<T>> vjp_scale(std::span<const Tensor<T>* const>, const Tensor<T>&,
                                 const OpAttrs<T>& a, const Tensor<T>& v) {
  return {scale(v, a.scalar)};
}

template <typename T>
std::vector<Tensor<T>> vjp_scale_channels(std::span<const Tensor<T>* const> in, const Tensor<T>&,
                                          const OpAttrs<T>&, const Tensor<T>& v) {
  const Tensor<T>& x = *in[0];
  const Shape3 s = x.shape3();
  std::vector<T> gs(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    T acc{0};
    for (std::size_t i = 0; i < s.plane(); ++i) acc += v[c * s.plane() + i] * x[c * s.plane() + i];
    gs[c] = acc;
  }
  return {scale_channels(v, *in[1]), Tensor<T>(in[1]->shape(), std::move(gs))};
}

template <typename T>
std::vector<Tensor<T>> vjp_transpose(std::span<const Tensor<T>* const>, const Tensor<T>&,
                                     const OpAttrs<T>&, const Tensor<T>& v) {
  return {transpose(v)};
}

template <typename T>
std::vector<Tensor<T>> vjp_reshape(std::span<const Tensor<T>* const> in, const Tensor<T>&,
                                   const OpAttrs<T>&, const Tensor<T>& v) {
  return {v.reshaped(in[0]->shape())};
}

template <typename T>
std::vector<Tensor<T>> vjp_sum_all(std::span<const Tensor<T>* const> in, const Tensor<T>&,
                                   const OpAttrs<T>&, const Tensor<T>& v) {
  return {Tensor<T>::full(in[0]->shape(), v[0])};
}

// ---- forward rules (replay) ---------------------------------------------

template <typename T>
const std::array<OpRule<T>, static_cast<std::size_t>(OpKind::Count_)>& op_rules() {
  using In = std::span<const Tensor<T>* const>;
  using A = const OpAttrs<T>&;
  static const std::array<OpRule<T>, static_cast<std::size_t>(OpKind::Count_)> rules{{
      /* Leaf */ {nullptr, nullptr},
      /* Matmul */ {[](In in, A) { return matmul(*in[0], *in[1]); }, &vjp_matmul<T>},
      /* GlobalAvgPool */ {[](In in, A) { return global_avg_pool(*in[0]); }, &vjp_gap<T>},
      /* Activation */ {[](In in, A a) { return activation(*in[0], a.act); }, &vjp_activation<T>},
      /* SoftmaxOverLevels */ {[](In in, A) { return softmax_over_levels(*in[0]); }, &vjp_softmax<T>},
      /* LayerNorm */
      {[](In in, A a) { return layer_norm(*in[0], *in[1], *in[2], a.scalar); }, &vjp_layer_norm<T>},
      /* Resize */ {[](In in, A a) { return resize(*in[0], a.target[0], a.target[1]); }, &vjp_resize<T>},
      /* Concat */
      {[](In in, A) {
         std::vector<Tensor<T>> xs;
         for (const Tensor<T>* x : in) xs.push_back(*x);
         return concat_channels(xs);
       },
       &vjp_concat<T>},
      /* SliceChannels */
      {[](In in, A a) { return slice_channels(*in[0], a.begin, a.count); }, &vjp_slice<T>},
      /* Conv2d */ {[](In in, A a) { return conv2d(*in[0], *in[1], a.stride, a.pad); }, &vjp_conv2d<T>},
      /* Add */ {[](In in, A) { return add(*in[0], *in[1]); }, &vjp_add<T>},
      /* Mul */ {[](In in, A) { return mul(*in[0], *in[1]); }, &vjp_mul<T>},
      /* Scale */ {[](In in, A a) { return scale(*in[0], a.scalar); }, &vjp_scale<T>},
      /* ScaleChannels */ {[](In in, A) { return scale_channels(*in[0], *in[1]); }, &vjp_scale_channels<T>},
      /* Transpose */ {[](In in, A) { return transpose(*in[0]); }, &vjp_transpose<T>},
      /* Reshape */ {[](In in, A a) { return reshape(*in[0], a.target); }, &vjp_reshape<T>},
      /* SumAll */ {[](In in, A) { return sum_all(*in[0]); }, &vjp_sum_all<T>},
  }};
  return rules;
}

}  // namespace detail

/// Gradients indexed by node id; entries are empty for nodes the root does
/// not depend on.
template <typename T>
class Gradients {
 public:
  explicit Gradients(std::vector<std::optional<Tensor<T>>> g) : grads_(std::move(g)) {}

  bool has(const Var<T>& v) const { return v.id < grads_.size() && grads_[v.id].has_value(); }

  /// Gradient for v; zeros shaped like v when v does not influence the root.
  Tensor<T> operator[](const Var<T>& v) const {
    if (has(v)) return *grads_[v.id];
    return Tensor<T>::zeros(v.shape());
  }

 private:
  std::vector<std::optional<Tensor<T>>> grads_;
};

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node<T>& node(std::size_t i) const { return nodes_.at(i); }

  Var<T> leaf(Tensor<T> value) {
    nodes_.push_back(Node<T>{OpKind::Leaf, {}, {}, std::move(value)});
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(const Var<T>& v) const {
    check_owned(v);
    return nodes_[v.id].value;
  }

  /// Appends a node whose forward value the caller already computed.
  Var<T> record(OpKind kind, std::span<const Var<T>> inputs, OpAttrs<T> attrs, Tensor<T> forward) {
    const auto k = static_cast<std::size_t>(kind);
    if (k >= static_cast<std::size_t>(OpKind::Count_)) {
      throw UnsupportedOpError("unknown kernel id " + std::to_string(k));
    }
    if (kind == OpKind::Leaf) throw UnsupportedOpError("leaves are created with Tape::leaf");
    const auto& rule = detail::op_rules<T>()[k];
    if (rule.vjp == nullptr || rule.forward == nullptr) {
      throw UnsupportedOpError(std::string("no VJP registered for ") + op_name(kind));
    }
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const auto& in : inputs) {
      check_owned(in);
      ids.push_back(in.id);
    }
    nodes_.push_back(Node<T>{kind, std::move(ids), std::move(attrs), std::move(forward)});
    return {this, nodes_.size() - 1};
  }

  /// Runs the registered forward rule on the inputs' values and records it.
  Var<T> apply(OpKind kind, std::span<const Var<T>> inputs, OpAttrs<T> attrs = {}) {
    const auto k = static_cast<std::size_t>(kind);
    if (k >= static_cast<std::size_t>(OpKind::Count_) || kind == OpKind::Leaf) {
      throw UnsupportedOpError("unknown kernel id " + std::to_string(k));
    }
    std::vector<const Tensor<T>*> vals;
    for (const auto& in : inputs) vals.push_back(&value(in));
    Tensor<T> out = detail::op_rules<T>()[k].forward(vals, attrs);
    return record(kind, inputs, std::move(attrs), std::move(out));
  }

  /// Recomputes every node from the leaves and returns the value of `node`.
  Tensor<T> replay(const Var<T>& target) const {
    check_owned(target);
    std::vector<Tensor<T>> vals;
    vals.reserve(target.id + 1);
    for (std::size_t i = 0; i <= target.id; ++i) {
      const Node<T>& n = nodes_[i];
      if (n.kind == OpKind::Leaf) {
        vals.push_back(n.value);
        continue;
      }
      std::vector<const Tensor<T>*> in;
      for (auto j : n.inputs) in.push_back(&vals[j]);
      vals.push_back(detail::op_rules<T>()[static_cast<std::size_t>(n.kind)].forward(in, n.attrs));
    }
    return vals.back();
  }

  Gradients<T> backward(const Var<T>& root) const {
    check_owned(root);
    if (nodes_[root.id].value.size() != 1) {
      throw ContractError("backward root must be scalar, got shape " +
                          to_string(nodes_[root.id].value.shape()));
    }
    std::vector<std::optional<Tensor<T>>> grads(nodes_.size());
    grads[root.id] = Tensor<T>::full(nodes_[root.id].value.shape(), T{1});
    for (std::size_t i = root.id + 1; i-- > 0;) {
      if (!grads[i] || nodes_[i].kind == OpKind::Leaf) continue;
      const Node<T>& n = nodes_[i];
      std::vector<const Tensor<T>*> in;
      for (auto j : n.inputs) in.push_back(&nodes_[j].value);
      auto cots = detail::op_rules<T>()[static_cast<std::size_t>(n.kind)].vjp(in, n.value, n.attrs, *grads[i]);
      for (std::size_t a = 0; a < n.inputs.size(); ++a) {
        auto& slot = grads[n.inputs[a]];
        slot = slot ? add(*slot, cots[a]) : std::move(cots[a]);
      }
    }
    return Gradients<T>(std::move(grads));
  }

  /// Discrete state of every non-smooth op: the sign class of each ReLU
  /// input and the argmax of each max-pool window. Two evaluations with equal
  /// signatures lie on the same smooth piece.
  std::vector<std::int64_t> kink_signature() const {
    std::vector<std::int64_t> sig;
    for (const Node<T>& n : nodes_) {
      if (n.kind == OpKind::Activation && n.attrs.act == Activation::Relu) {
        for (T x : nodes_[n.inputs[0]].value.data()) sig.push_back(x > T{0} ? 1 : (x < T{0} ? -1 : 0));
      } else if (n.kind == OpKind::Resize) {
        const Tensor<T>& x = nodes_[n.inputs[0]].value;
        const Shape3 s = x.shape3();
        const std::size_t th = n.attrs.target[0], tw = n.attrs.target[1];
        if (detail::classify_resize(s.h, s.w, th, tw) != detail::ResizeMode::Downsample) continue;
        for (std::size_t c = 0; c < s.c; ++c)
          for (std::size_t i = 0; i < th; ++i)
            for (std::size_t j = 0; j < tw; ++j)
              sig.push_back(static_cast<std::int64_t>(detail::pool_argmax(x, c, i, j, s.h / th, s.w / tw)));
      }
    }
    return sig;
  }

 private:
  void check_owned(const Var<T>& v) const {
    if (v.tape != this || v.id >= nodes_.size()) {
      throw ContractError("node reference does not belong to this tape");
    }
  }

  std::vector<Node<T>> nodes_;
};

// ---- taped overloads of the kernels -------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Var<T> in[] = {a, b};
  return a.tape->apply(OpKind::Matmul, in);
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Var<T> in[] = {x};
  return x.tape->apply(OpKind::GlobalAvgPool, in);
}

template <typename T>
Var<T> activation(const Var<T>& x, Activation kind) {
  const Var<T> in[] = {x};
  OpAttrs<T> a;
  a.act = kind;
  return x.tape->apply(OpKind::Activation, in, a);
}

template <typename T>
Var<T> softmax_over_levels(const Var<T>& m) {
  const Var<T> in[] = {m};
  return m.tape->apply(OpKind::SoftmaxOverLevels, in);
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const Var<T> in[] = {x, gamma, beta};
  OpAttrs<T> a;
  a.scalar = eps;
  return x.tape->apply(OpKind::LayerNorm, in, a);
}

template <typename T>
Var<T> resize(const Var<T>& x, std::size_t th, std::size_t tw) {
  const Var<T> in[] = {x};
  OpAttrs<T> a;
  a.target = {th, tw};
  return x.tape->apply(OpKind::Resize, in, a);
}

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> xs) {
  if (xs.empty()) throw DimensionError("concat_channels needs at least one tensor");
  return xs.front().tape->apply(OpKind::Concat, xs);
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  return concat_channels(std::span<const Var<T>>(xs));
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t count) {
  const Var<T> in[] = {x};
  OpAttrs<T> a;
  a.begin = begin;
  a.count = count;
  return x.tape->apply(OpKind::SliceChannels, in, a);
}

template <typename T>
std::vector<Var<T>> split_channels(const Var<T>& x, std::size_t groups) {
  const std::size_t c = x.shape3().c;
  detail::require(groups >= 1 && c % groups == 0,
                  "split_channels: " + std::to_string(c) + " channels not divisible into " +
                      std::to_string(groups) + " groups");
  std::vector<Var<T>> out;
  for (std::size_t g = 0; g < groups; ++g) out.push_back(slice_channels(x, g * (c / groups), c / groups));
  return out;
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, int stride, int pad) {
  const Var<T> in[] = {x, weight};
  OpAttrs<T> a;
  a.stride = stride;
  a.pad = pad;
  return x.tape->apply(OpKind::Conv2d, in, a);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const Var<T> in[] = {a, b};
  return a.tape->apply(OpKind::Add, in);
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const Var<T> in[] = {a, b};
  return a.tape->apply(OpKind::Mul, in);
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  const Var<T> in[] = {x};
  OpAttrs<T> a;
  a.scalar = factor;
  return x.tape->apply(OpKind::Scale, in, a);
}

template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& s) {
  const Var<T> in[] = {x, s};
  return x.tape->apply(OpKind::ScaleChannels, in);
}

template <typename T>
Var<T> transpose(const Var<T>& m) {
  const Var<T> in[] = {m};
  return m.tape->apply(OpKind::Transpose, in);
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape s) {
  const Var<T> in[] = {x};
  OpAttrs<T> a;
  a.target = std::move(s);
  return x.tape->apply(OpKind::Reshape, in, a);
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  const Var<T> in[] = {x};
  return x.tape->apply(OpKind::SumAll, in);
}

}  // namespace smsl
