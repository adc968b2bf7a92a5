#pragma once

// Naive reference implementation of the kernels and of the full neck.
//
// Everything here is written with scalar loops over std::vector<double> and
// explicit index arithmetic. It only reads and writes Tensor storage and never
// calls the kernels in kernels.hpp (the build checks that this header does not
// include it). Double precision only.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "smsl/level_set.hpp"
#include "smsl/params.hpp"
#include "smsl/tensor.hpp"

namespace smsl::oracle {

/// [C, H, W] scratch map.
struct Map {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<double> v;

  Map() = default;
  Map(std::size_t c_, std::size_t h_, std::size_t w_) : c(c_), h(h_), w(w_), v(c_ * h_ * w_, 0.0) {}

  double& operator()(std::size_t k, std::size_t i, std::size_t j) { return v[(k * h + i) * w + j]; }
  double operator()(std::size_t k, std::size_t i, std::size_t j) const { return v[(k * h + i) * w + j]; }
};

inline Map to_map(const Tensor<double>& t) {
  if (t.rank() != 3) throw DimensionError("oracle expects [C,H,W] maps");
  Map m(t.dim(0), t.dim(1), t.dim(2));
  std::copy(t.data().begin(), t.data().end(), m.v.begin());
  return m;
}

inline Tensor<double> to_tensor(const Map& m) { return Tensor<double>({m.c, m.h, m.w}, m.v); }

/// Row-major [rows, cols] matrix read out of a tensor of any rank.
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;
  double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

inline Mat to_mat(const Tensor<double>& t, std::size_t rows) {
  Mat m{rows, t.size() / rows, std::vector<double>(t.data().begin(), t.data().end())};
  return m;
}

// ---- scalar building blocks ---------------------------------------------

inline double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }
inline double relu(double t) { return t > 0.0 ? t : 0.0; }

/// y = A x for a dense matrix and vector.
inline std::vector<double> matvec(const Mat& a, const std::vector<double>& x) {
  if (a.cols != x.size()) throw DimensionError("oracle matvec extent mismatch");
  std::vector<double> y(a.rows, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) y[i] += a(i, j) * x[j];
  return y;
}

inline std::vector<double> channel_means(const Map& m) {
  std::vector<double> out(m.c, 0.0);
  for (std::size_t k = 0; k < m.c; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.h; ++i)
      for (std::size_t j = 0; j < m.w; ++j) s += m(k, i, j);
    out[k] = s / static_cast<double>(m.h * m.w);
  }
  return out;
}

inline std::vector<double> layer_norm(const std::vector<double>& x, const std::vector<double>& gamma,
                                      const std::vector<double>& beta, double eps) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double t : x) mean += t;
  mean /= n;
  double var = 0.0;
  for (double t : x) var += (t - mean) * (t - mean);
  var /= n;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gamma[i] * (x[i] - mean) / std::sqrt(var + eps) + beta[i];
  return out;
}

/// Resize to (th, tw): bilinear with half-pixel centers when growing, max
/// pooling over non-overlapping windows when shrinking.
inline Map resize(const Map& x, std::size_t th, std::size_t tw) {
  auto pow2_ratio = [](std::size_t a, std::size_t b) {
    const std::size_t big = std::max(a, b), small = std::min(a, b);
    if (big % small != 0) return false;
    std::size_t q = big / small;
    while (q % 2 == 0) q /= 2;
    return q == 1;
  };
  if (!pow2_ratio(x.h, th) || !pow2_ratio(x.w, tw)) throw UnsupportedResizeError("oracle: non power-of-two resize");
  if (th == x.h && tw == x.w) return x;
  Map out(x.c, th, tw);
  if (th <= x.h && tw <= x.w) {
    const std::size_t kh = x.h / th, kw = x.w / tw;
    for (std::size_t k = 0; k < x.c; ++k)
      for (std::size_t i = 0; i < th; ++i)
        for (std::size_t j = 0; j < tw; ++j) {
          double best = x(k, i * kh, j * kw);
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b) best = std::max(best, x(k, i * kh + a, j * kw + b));
          out(k, i, j) = best;
        }
    return out;
  }
  if (th < x.h || tw < x.w) throw UnsupportedResizeError("oracle: mixed resize");
  auto source = [](std::size_t dst, std::size_t in, std::size_t outn, std::size_t& lo, std::size_t& hi, double& f) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    lo = static_cast<std::size_t>(s);
    hi = lo + 1 < in ? lo + 1 : in - 1;
    f = s - static_cast<double>(lo);
  };
  for (std::size_t i = 0; i < th; ++i)
    for (std::size_t j = 0; j < tw; ++j) {
      std::size_t y0, y1, x0, x1;
      double fy, fx;
      source(i, x.h, th, y0, y1, fy);
      source(j, x.w, tw, x0, x1, fx);
      for (std::size_t k = 0; k < x.c; ++k) {
        out(k, i, j) = (1 - fy) * (1 - fx) * x(k, y0, x0) + (1 - fy) * fx * x(k, y0, x1) +
                       fy * (1 - fx) * x(k, y1, x0) + fy * fx * x(k, y1, x1);
      }
    }
  return out;
}

/// 1x1 convolution with a [Cout, Cin, 1, 1] weight.
inline Map conv1x1(const Map& x, const Tensor<double>& weight) {
  const std::size_t cout = weight.dim(0);
  Map out(cout, x.h, x.w);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < x.h; ++i)
      for (std::size_t j = 0; j < x.w; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < x.c; ++k) s += weight[o * x.c + k] * x(k, i, j);
        out(o, i, j) = s;
      }
  return out;
}

// ---- naive kernels on tensors (per-kernel oracle checks) ----------------

namespace naive {

inline Tensor<double> matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw DimensionError("naive matmul mismatch");
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) out[i * n + j] += a[i * k + p] * b[p * n + j];
  return Tensor<double>({m, n}, out);
}

inline Tensor<double> global_avg_pool(const Tensor<double>& x) {
  const auto m = channel_means(to_map(x));
  return Tensor<double>({m.size()}, m);
}

inline Tensor<double> sigmoid(const Tensor<double>& x) {
  std::vector<double> v(x.data().begin(), x.data().end());
  for (auto& t : v) t = oracle::sigmoid(t);
  return Tensor<double>(x.shape(), v);
}

inline Tensor<double> relu(const Tensor<double>& x) {
  std::vector<double> v(x.data().begin(), x.data().end());
  for (auto& t : v) t = oracle::relu(t);
  return Tensor<double>(x.shape(), v);
}

inline Tensor<double> softmax_over_levels(const Tensor<double>& m) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  std::vector<double> out(m.size());
  for (std::size_t c = 0; c < cols; ++c) {
    double z = 0.0;
    for (std::size_t i = 0; i < rows; ++i) z += std::exp(m[i * cols + c]);
    for (std::size_t i = 0; i < rows; ++i) out[i * cols + c] = std::exp(m[i * cols + c]) / z;
  }
  return Tensor<double>(m.shape(), out);
}

inline Tensor<double> layer_norm(const Tensor<double>& x, const Tensor<double>& gamma, const Tensor<double>& beta,
                                 double eps) {
  auto vec = [](const Tensor<double>& t) { return std::vector<double>(t.data().begin(), t.data().end()); };
  return Tensor<double>(x.shape(), oracle::layer_norm(vec(x), vec(gamma), vec(beta), eps));
}

inline Tensor<double> resize(const Tensor<double>& x, std::size_t th, std::size_t tw) {
  return to_tensor(oracle::resize(to_map(x), th, tw));
}

inline Tensor<double> concat_channels(const std::vector<Tensor<double>>& xs) {
  std::size_t c = 0;
  for (const auto& x : xs) c += x.dim(0);
  Map out(c, xs.front().dim(1), xs.front().dim(2));
  std::size_t base = 0;
  for (const auto& x : xs) {
    const Map m = to_map(x);
    if (m.h != out.h || m.w != out.w) throw DimensionError("naive concat spatial mismatch");
    for (std::size_t k = 0; k < m.c; ++k)
      for (std::size_t i = 0; i < m.h; ++i)
        for (std::size_t j = 0; j < m.w; ++j) out(base + k, i, j) = m(k, i, j);
    base += m.c;
  }
  return to_tensor(out);
}

inline std::vector<Tensor<double>> split_channels(const Tensor<double>& x, std::size_t groups) {
  const Map m = to_map(x);
  const std::size_t per = m.c / groups;
  std::vector<Tensor<double>> out;
  for (std::size_t g = 0; g < groups; ++g) {
    Map part(per, m.h, m.w);
    for (std::size_t k = 0; k < per; ++k)
      for (std::size_t i = 0; i < m.h; ++i)
        for (std::size_t j = 0; j < m.w; ++j) part(k, i, j) = m(g * per + k, i, j);
    out.push_back(to_tensor(part));
  }
  return out;
}

/// Six nested loops with explicit bounds checks for padding.
inline Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& weight, int stride, int pad) {
  const long cin = static_cast<long>(x.dim(0)), h = static_cast<long>(x.dim(1)), w = static_cast<long>(x.dim(2));
  const long cout = static_cast<long>(weight.dim(0)), k = static_cast<long>(weight.dim(2));
  const long oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(cout * oh * ow), 0.0);
  for (long o = 0; o < cout; ++o)
    for (long i = 0; i < oh; ++i)
      for (long j = 0; j < ow; ++j)
        for (long c = 0; c < cin; ++c)
          for (long a = 0; a < k; ++a)
            for (long b = 0; b < k; ++b) {
              const long y = i * stride - pad + a, xx = j * stride - pad + b;
              if (y < 0 || y >= h || xx < 0 || xx >= w) continue;
              out[static_cast<std::size_t>((o * oh + i) * ow + j)] +=
                  weight[static_cast<std::size_t>(((o * cin + c) * k + a) * k + b)] *
                  x[static_cast<std::size_t>((c * h + y) * w + xx)];
            }
  return Tensor<double>({static_cast<std::size_t>(cout), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)},
                        out);
}

}  // namespace naive

// ---- reference neck -------------------------------------------------------

namespace detail {

inline std::vector<double> vec(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace detail

struct SfcBranchRef {
  const Tensor<double>* w;
  const Tensor<double>* gamma;
  const Tensor<double>* beta;
  const Tensor<double>* v;
};

/// Selective combination written directly from its definition:
///   Qsum = sum_i Q^i, g_c = mean(Qsum_c), z = relu(LN(W g)), U = V z,
///   A[i,c] = exp(U[iC+c]) / sum_j exp(U[jC+c]), F_c = sum_i A[i,c] Q^i_c.
inline Map reference_combine(const std::vector<Map>& q, const SfcBranchRef& b, double eps,
                             std::vector<double>* attention = nullptr) {
  const std::size_t L = q.size(), C = q[0].c, H = q[0].h, W = q[0].w;
  std::vector<double> g(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t l = 0; l < L; ++l) s += q[l](c, i, j);
    g[c] = s / static_cast<double>(H * W);
  }
  const std::size_t red = b.w->dim(0);
  std::vector<double> z = layer_norm(matvec(to_mat(*b.w, red), g), detail::vec(*b.gamma), detail::vec(*b.beta), eps);
  for (auto& t : z) t = relu(t);
  const std::vector<double> u = matvec(to_mat(*b.v, L * C), z);
  std::vector<double> a(L * C);
  for (std::size_t c = 0; c < C; ++c) {
    double z_sum = 0.0;
    for (std::size_t l = 0; l < L; ++l) z_sum += std::exp(u[l * C + c]);
    for (std::size_t l = 0; l < L; ++l) a[l * C + c] = std::exp(u[l * C + c]) / z_sum;
  }
  if (attention) *attention = a;
  Map out(C, H, W);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t l = 0; l < L; ++l) out(c, i, j) += a[l * C + c] * q[l](c, i, j);
  return out;
}

/// Non-local block with explicit N x N attention loops.
inline Map reference_nonlocal(const Map& fg, const BasicNonLocal<Tensor<double>>& p) {
  if (fg.c % 2 != 0) throw ConfigError("oracle non-local needs even C");
  const std::size_t E = fg.c / 2, N = fg.h * fg.w;
  const Map th = conv1x1(fg, p.theta), ph = conv1x1(fg, p.phi), gg = conv1x1(fg, p.g);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(E));
  Map y(E, fg.h, fg.w);
  std::vector<double> logit(N);
  for (std::size_t i = 0; i < N; ++i) {
    double mx = -HUGE_VAL;
    for (std::size_t j = 0; j < N; ++j) {
      double s = 0.0;
      for (std::size_t e = 0; e < E; ++e) s += th.v[e * N + i] * ph.v[e * N + j];
      logit[j] = s * inv_sqrt;
      mx = std::max(mx, logit[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < N; ++j) z += std::exp(logit[j] - mx);
    for (std::size_t j = 0; j < N; ++j) {
      const double wgt = std::exp(logit[j] - mx) / z;
      for (std::size_t e = 0; e < E; ++e) y.v[e * N + i] += wgt * gg.v[e * N + j];
    }
  }
  Map out = conv1x1(y, p.w_z);
  for (std::size_t k = 0; k < out.v.size(); ++k) out.v[k] += fg.v[k];
  return out;
}

/// Attention matrices seen by the reference forward (locals, then global).
struct ReferenceTrace {
  std::vector<double> gate;
  std::vector<std::vector<double>> attention;
};

inline LevelSet<double> reference_forward(const LevelSet<double>& levels, const SmslParams<double>& params,
                                          int gather_level, double ln_eps, ReferenceTrace* trace = nullptr) {
  validate_levels(levels);
  validate_params(params);
  const std::size_t L = levels.count(), C = levels.channels();
  if (params.L != L || params.C != C) throw DimensionError("oracle: params do not match levels");
  if (!levels.contains(gather_level)) throw ConfigError("oracle: gather level outside the level range");

  const Map target = to_map(levels.at_level(gather_level));
  const std::size_t H = target.h, W = target.w;

  // D^l
  std::vector<Map> d;
  for (const auto& f : levels.features) d.push_back(resize(to_map(f), H, W));

  // x_{c'} over the stacked channels c' = l * C + c, then s = sigmoid(W2 relu(W1 x)).
  std::vector<double> x(L * C);
  for (std::size_t l = 0; l < L; ++l) {
    const auto m = channel_means(d[l]);
    for (std::size_t c = 0; c < C; ++c) x[l * C + c] = m[c];
  }
  std::vector<double> hidden = matvec(to_mat(params.cr.w1, params.cr.w1.dim(0)), x);
  for (auto& t : hidden) t = relu(t);
  std::vector<double> s = matvec(to_mat(params.cr.w2, L * C), hidden);
  for (auto& t : s) t = sigmoid(t);
  if (trace) trace->gate = s;

  // Q^l = s ⊗ D^l per stacked channel.
  std::vector<Map> q = d;
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) q[l](c, i, j) = s[l * C + c] * d[l](c, i, j);

  auto branch_ref = [](const BasicSfcBranch<Tensor<double>>& b) {
    return SfcBranchRef{&b.w, &b.ln_gamma, &b.ln_beta, &b.v};
  };
  std::vector<Map> local;
  std::vector<double> att;
  for (std::size_t l = 0; l < L; ++l) {
    local.push_back(reference_combine(q, branch_ref(params.sfc_local[l]), ln_eps, &att));
    if (trace) trace->attention.push_back(att);
  }
  const Map fg = reference_combine(q, branch_ref(params.sfc_global), ln_eps, &att);
  if (trace) trace->attention.push_back(att);
  const Map g = reference_nonlocal(fg, params.nonlocal);

  LevelSet<double> out;
  out.l_min = levels.l_min;
  for (std::size_t l = 0; l < L; ++l) {
    Map fused(C, H, W);
    for (std::size_t k = 0; k < fused.v.size(); ++k) fused.v[k] = local[l].v[k] + g.v[k];
    const Map orig = to_map(levels.features[l]);
    Map scattered = resize(fused, orig.h, orig.w);
    for (std::size_t k = 0; k < scattered.v.size(); ++k) scattered.v[k] += orig.v[k];
    out.features.push_back(to_tensor(scattered));
  }
  return out;
}

// ---- comparison -----------------------------------------------------------

struct DiffReport {
  double max_abs = 0.0;
  double max_rel = 0.0;
  std::array<std::size_t, 4> argmax_index{};  // level offset, channel, row, column
  int argmax_level = 0;
  double abs_tol = 0.0;
  double rel_tol = 0.0;
  bool passed = true;

  std::string to_text() const {
    std::ostringstream os;
    os.precision(6);
    os << std::scientific << "max_abs=" << max_abs << '\n'
       << "max_rel=" << max_rel << '\n'
       << "abs_tol=" << abs_tol << '\n'
       << "rel_tol=" << rel_tol << '\n'
       << "argmax_index=" << argmax_level << ',' << argmax_index[1] << ',' << argmax_index[2] << ','
       << argmax_index[3] << '\n'
       << "passed=" << (passed ? 1 : 0) << '\n';
    return os.str();
  }
};

/// Elementwise deviation between two level sets. Relative deviation is
/// |a - b| / max(|a|, |b|) (zero when both are zero). Tolerances are inclusive.
inline DiffReport compare(const LevelSet<double>& a, const LevelSet<double>& b, double abs_tol, double rel_tol) {
  if (a.l_min != b.l_min || a.count() != b.count()) throw DimensionError("compare: level structure differs");
  DiffReport rep;
  rep.abs_tol = abs_tol;
  rep.rel_tol = rel_tol;
  rep.argmax_level = a.l_min;
  for (std::size_t l = 0; l < a.count(); ++l) {
    const Tensor<double>& x = a.features[l];
    const Tensor<double>& y = b.features[l];
    if (x.shape() != y.shape()) throw DimensionError("compare: shape differs at level " + std::to_string(a.l_min + l));
    const std::size_t h = x.dim(1), w = x.dim(2);
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double d = std::abs(x[k] - y[k]);
      const double mag = std::max(std::abs(x[k]), std::abs(y[k]));
      const double rel = mag > 0.0 ? d / mag : 0.0;
      if (d > rep.max_abs) {
        rep.max_abs = d;
        rep.argmax_level = a.l_min + static_cast<int>(l);
        rep.argmax_index = {l, k / (h * w), (k / w) % h, k % w};
      }
      rep.max_rel = std::max(rep.max_rel, rel);
    }
  }
  rep.passed = rep.max_abs <= abs_tol && rep.max_rel <= rel_tol;
  return rep;
}

}  // namespace smsl::oracle
