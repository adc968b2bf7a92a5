#pragma once

// Dense kernels over channels-first tensors. Every kernel is a pure function
// with a fixed, thread-independent accumulation order, and every output passes
// through the Tensor constructor, which rejects non-finite values.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "smsl/tensor.hpp"

namespace smsl {

enum class Activation { Sigmoid, Relu };

inline const char* activation_name(Activation a) {
  return a == Activation::Sigmoid ? "sigmoid" : "relu";
}

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

/// Integer power-of-two test on positive values.
inline bool is_pow2(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

template <typename T>
T sigmoid(T t) {
  if (t >= T{0}) return T{1} / (T{1} + std::exp(-t));
  const T e = std::exp(t);
  return e / (T{1} + e);
}

// Bilinear source taps for one output coordinate, half-pixel centers:
//   src = (dst + 0.5) * (in / out) - 0.5, clamped to [0, in - 1]
//   lo = floor(src), hi = min(lo + 1, in - 1), frac = src - lo
// Interpolation is written lo + frac * (hi - lo) so equal taps reproduce
// their value bit-exactly.
template <typename T>
struct Taps {
  std::size_t lo;
  std::size_t hi;
  T frac;
};

template <typename T>
Taps<T> bilinear_taps(std::size_t dst, std::size_t in, std::size_t out) {
  const T scale = static_cast<T>(in) / static_cast<T>(out);
  T src = (static_cast<T>(dst) + T{0.5}) * scale - T{0.5};
  if (src < T{0}) src = T{0};
  const T top = static_cast<T>(in - 1);
  if (src > top) src = top;
  const auto lo = static_cast<std::size_t>(std::floor(src));
  const std::size_t hi = std::min(lo + 1, in - 1);
  return {lo, hi, src - static_cast<T>(lo)};
}

template <typename T>
T lerp(T a, T b, T t) {
  return a + t * (b - a);
}

enum class ResizeMode { Identity, Upsample, Downsample };

inline ResizeMode classify_resize(std::size_t h, std::size_t w, std::size_t th, std::size_t tw) {
  if (th == 0 || tw == 0) throw DimensionError("resize target extents must be >= 1");
  if (h == th && w == tw) return ResizeMode::Identity;
  auto ratio_ok = [](std::size_t from, std::size_t to) {
    if (to >= from) return to % from == 0 && is_pow2(to / from);
    return from % to == 0 && is_pow2(from / to);
  };
  if (!ratio_ok(h, th) || !ratio_ok(w, tw)) {
    throw UnsupportedResizeError("resize " + std::to_string(h) + "x" + std::to_string(w) +
                                 " -> " + std::to_string(th) + "x" + std::to_string(tw) +
                                 " is not a power-of-two ratio");
  }
  if (th >= h && tw >= w) return ResizeMode::Upsample;
  if (th <= h && tw <= w) return ResizeMode::Downsample;
  throw UnsupportedResizeError("resize mixes upsampling and downsampling across axes");
}

/// Flat index of the first maximum (row-major scan) in the pooling window
/// feeding output cell (c, oi, oj).
template <typename T>
std::size_t pool_argmax(const Tensor<T>& x, std::size_t c, std::size_t oi, std::size_t oj,
                        std::size_t kh, std::size_t kw) {
  const std::size_t h = x.dim(1), w = x.dim(2);
  std::size_t best = (c * h + oi * kh) * w + oj * kw;
  T best_v = x[best];
  for (std::size_t di = 0; di < kh; ++di) {
    for (std::size_t dj = 0; dj < kw; ++dj) {
      const std::size_t idx = (c * h + oi * kh + di) * w + oj * kw + dj;
      if (x[idx] > best_v) {
        best_v = x[idx];
        best = idx;
      }
    }
  }
  return best;
}

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, int stride, int pad) {
  const std::ptrdiff_t span = static_cast<std::ptrdiff_t>(in) + 2 * pad - static_cast<std::ptrdiff_t>(k);
  if (span < 0) throw DimensionError("conv2d kernel larger than padded input");
  return static_cast<std::size_t>(span / stride) + 1;
}

template <typename T>
void check_conv_geometry(const Tensor<T>& x, const Tensor<T>& weight, int stride, int pad) {
  require(x.rank() == 3, "conv2d input must be [C,H,W], got " + to_string(x.shape()));
  require(weight.rank() == 4, "conv2d weight must be [Cout,Cin,k,k], got " + to_string(weight.shape()));
  require(weight.dim(1) == x.dim(0), "conv2d input channels " + std::to_string(x.dim(0)) +
                                         " != weight Cin " + std::to_string(weight.dim(1)));
  const std::size_t k = weight.dim(2);
  require(weight.dim(3) == k && (k == 1 || k == 3), "conv2d kernel must be 1x1 or 3x3");
  require(stride == 1 || stride == 2, "conv2d stride must be 1 or 2");
  require(pad == 0 || pad == 1, "conv2d pad must be 0 or 1");
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2,
                  "matmul expects rank-2 operands, got " + to_string(a.shape()) + " and " +
                      to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  detail::require(b.dim(0) == k, "matmul inner extents differ: " + to_string(a.shape()) + " x " +
                                     to_string(b.shape()));
  std::vector<T> out(m * n);
  auto pa = a.data();
  auto pb = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += pa[i * k + p] * pb[p * n + j];
      out[i * n + j] = acc;
    }
  }
  return Tensor<T>({m, n}, std::move(out));
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape3 s = x.shape3();
  std::vector<T> out(s.c);
  auto p = x.data();
  const T denom = static_cast<T>(s.plane());
  for (std::size_t c = 0; c < s.c; ++c) {
    T acc{0};
    for (std::size_t i = 0; i < s.plane(); ++i) acc += p[c * s.plane() + i];
    out[c] = acc / denom;
  }
  return Tensor<T>({s.c}, std::move(out));
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  std::vector<T> out(x.size());
  auto p = x.data();
  if (kind == Activation::Sigmoid) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid(p[i]);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[i] > T{0} ? p[i] : T{0};
  }
  return Tensor<T>(x.shape(), std::move(out));
}

/// Softmax down each column of an [L, C] matrix (normalizes across levels).
template <typename T>
Tensor<T> softmax_over_levels(const Tensor<T>& m) {
  detail::require(m.rank() == 2, "softmax_over_levels expects [L,C], got " + to_string(m.shape()));
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  std::vector<T> out(m.size());
  auto p = m.data();
  for (std::size_t c = 0; c < cols; ++c) {
    T mx = p[c];
    for (std::size_t i = 1; i < rows; ++i) mx = std::max(mx, p[i * cols + c]);
    T sum{0};
    for (std::size_t i = 0; i < rows; ++i) {
      const T e = std::exp(p[i * cols + c] - mx);
      out[i * cols + c] = e;
      sum += e;
    }
    for (std::size_t i = 0; i < rows; ++i) out[i * cols + c] /= sum;
  }
  return Tensor<T>(m.shape(), std::move(out));
}

/// Layer normalization over a vector with population variance.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  detail::require(x.rank() == 1, "layer_norm expects a vector, got " + to_string(x.shape()));
  detail::require(gamma.shape() == x.shape() && beta.shape() == x.shape(),
                  "layer_norm affine shape mismatch");
  if (!(eps > T{0})) throw ConfigError("layer_norm eps must be > 0");
  const std::size_t d = x.size();
  auto p = x.data();
  T mean{0};
  for (std::size_t i = 0; i < d; ++i) mean += p[i];
  mean /= static_cast<T>(d);
  T var{0};
  for (std::size_t i = 0; i < d; ++i) var += (p[i] - mean) * (p[i] - mean);
  var /= static_cast<T>(d);
  const T inv = T{1} / std::sqrt(var + eps);
  std::vector<T> out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = gamma[i] * ((p[i] - mean) * inv) + beta[i];
  return Tensor<T>(x.shape(), std::move(out));
}

/// Power-of-two spatial resize: bilinear (half-pixel centers) when growing,
/// non-overlapping max pooling with kernel = stride = factor when shrinking.
template <typename T>
Tensor<T> resize(const Tensor<T>& x, std::size_t th, std::size_t tw) {
  const Shape3 s = x.shape3();
  const auto mode = detail::classify_resize(s.h, s.w, th, tw);
  if (mode == detail::ResizeMode::Identity) return x;
  std::vector<T> out(s.c * th * tw);
  if (mode == detail::ResizeMode::Downsample) {
    const std::size_t kh = s.h / th, kw = s.w / tw;
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < th; ++i)
        for (std::size_t j = 0; j < tw; ++j)
          out[(c * th + i) * tw + j] = x[detail::pool_argmax(x, c, i, j, kh, kw)];
  } else {
    for (std::size_t i = 0; i < th; ++i) {
      const auto ty = detail::bilinear_taps<T>(i, s.h, th);
      for (std::size_t j = 0; j < tw; ++j) {
        const auto tx = detail::bilinear_taps<T>(j, s.w, tw);
        for (std::size_t c = 0; c < s.c; ++c) {
          const T top = detail::lerp(x.at(c, ty.lo, tx.lo), x.at(c, ty.lo, tx.hi), tx.frac);
          const T bot = detail::lerp(x.at(c, ty.hi, tx.lo), x.at(c, ty.hi, tx.hi), tx.frac);
          out[(c * th + i) * tw + j] = detail::lerp(top, bot, ty.frac);
        }
      }
    }
  }
  return Tensor<T>({s.c, th, tw}, std::move(out));
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> xs) {
  detail::require(!xs.empty(), "concat_channels needs at least one tensor");
  const Shape3 s0 = xs.front().shape3();
  std::size_t total = 0;
  for (const auto& x : xs) {
    const Shape3 s = x.shape3();
    detail::require(s.h == s0.h && s.w == s0.w, "concat_channels spatial mismatch: " +
                                                    to_string(x.shape()) + " vs " +
                                                    to_string(xs.front().shape()));
    total += s.c;
  }
  std::vector<T> out;
  out.reserve(total * s0.plane());
  for (const auto& x : xs) out.insert(out.end(), x.data().begin(), x.data().end());
  return Tensor<T>({total, s0.h, s0.w}, std::move(out));
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  return concat_channels(std::span<const Tensor<T>>(xs));
}

/// Copies channels [begin, begin + count) out of a [C,H,W] tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  const Shape3 s = x.shape3();
  detail::require(count >= 1 && begin + count <= s.c, "slice_channels range out of bounds");
  auto p = x.data();
  std::vector<T> out(p.begin() + begin * s.plane(), p.begin() + (begin + count) * s.plane());
  return Tensor<T>({count, s.h, s.w}, std::move(out));
}

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, std::size_t groups) {
  const Shape3 s = x.shape3();
  detail::require(groups >= 1 && s.c % groups == 0,
                  "split_channels: " + std::to_string(s.c) + " channels not divisible into " +
                      std::to_string(groups) + " groups");
  const std::size_t per = s.c / groups;
  std::vector<Tensor<T>> out;
  out.reserve(groups);
  for (std::size_t g = 0; g < groups; ++g) out.push_back(slice_channels(x, g * per, per));
  return out;
}

/// Cross-correlation with zero padding and no bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, int stride, int pad) {
  detail::check_conv_geometry(x, weight, stride, pad);
  const Shape3 s = x.shape3();
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  const std::size_t oh = detail::conv_out_extent(s.h, k, stride, pad);
  const std::size_t ow = detail::conv_out_extent(s.w, k, stride, pad);
  std::vector<T> out(cout * oh * ow);
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t oi = 0; oi < oh; ++oi) {
      for (std::size_t oj = 0; oj < ow; ++oj) {
        T acc{0};
        for (std::size_t ci = 0; ci < s.c; ++ci) {
          for (std::size_t ki = 0; ki < k; ++ki) {
            const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi) * stride + static_cast<std::ptrdiff_t>(ki) - pad;
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(s.h)) continue;
            for (std::size_t kj = 0; kj < k; ++kj) {
              const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj) * stride + static_cast<std::ptrdiff_t>(kj) - pad;
              if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(s.w)) continue;
              acc += weight[((co * s.c + ci) * k + ki) * k + kj] *
                     x.at(ci, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
            }
          }
        }
        out[(co * oh + oi) * ow + oj] = acc;
      }
    }
  }
  return Tensor<T>({cout, oh, ow}, std::move(out));
}

// Elementwise and layout helpers used to compose the neck.

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(),
                  "add shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor<T>(a.shape(), std::move(out));
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(),
                  "mul shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor<T>(a.shape(), std::move(out));
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return Tensor<T>(x.shape(), std::move(out));
}

/// out[c,i,j] = s[c] * x[c,i,j]
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s) {
  const Shape3 sh = x.shape3();
  detail::require(s.size() == sh.c, "scale_channels: gate length " + std::to_string(s.size()) +
                                        " != channels " + std::to_string(sh.c));
  std::vector<T> out(x.size());
  for (std::size_t c = 0; c < sh.c; ++c)
    for (std::size_t i = 0; i < sh.plane(); ++i) out[c * sh.plane() + i] = s[c] * x[c * sh.plane() + i];
  return Tensor<T>(x.shape(), std::move(out));
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& m) {
  detail::require(m.rank() == 2, "transpose expects rank 2, got " + to_string(m.shape()));
  const std::size_t r = m.dim(0), c = m.dim(1);
  std::vector<T> out(m.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = m[i * c + j];
  return Tensor<T>({c, r}, std::move(out));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape s) {
  detail::require(volume(s) == x.size(),
                  "reshape " + to_string(x.shape()) + " -> " + to_string(s) + " changes volume");
  return x.reshaped(std::move(s));
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc{0};
  for (auto v : x.data()) acc += v;
  return Tensor<T>::scalar(acc);
}

}  // namespace smsl
