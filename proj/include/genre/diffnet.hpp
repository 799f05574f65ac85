#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace genre {

// Real 4-D array, batch x channels x height x width, with a same-shape
// gradient accumulator (left empty for activations that never need one).
template <class T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;
  std::vector<T> grad;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, T fill = T{})
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

  T* ch(int b, int k) { return data.data() + (static_cast<std::size_t>(b) * c + k) * plane(); }
  const T* ch(int b, int k) const { return data.data() + (static_cast<std::size_t>(b) * c + k) * plane(); }
  T& at(int b, int k, int y, int x) { return ch(b, k)[static_cast<std::size_t>(y) * w + x]; }
  const T& at(int b, int k, int y, int x) const { return ch(b, k)[static_cast<std::size_t>(y) * w + x]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T{});
  }
  void zero_grad() { grad.assign(data.size(), T{}); }
};

template <class T>
Tensor4<T> zeros_like(const Tensor4<T>& t) {
  return Tensor4<T>(t.n, t.c, t.h, t.w);
}

template <class T>
void add_into(std::vector<T>& dst, const std::vector<T>& src) {
  require(dst.size() == src.size(), "shape_mismatch", "gradient accumulate size mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Named trainable tensors with AdamW moments and a shared step counter.
template <class T>
struct ParamSet {
  struct Param {
    std::string name;
    Tensor4<T> value;  // value.grad holds the gradient
    std::vector<T> m, v;
  };

  std::vector<Param> params;
  std::unordered_map<std::string, std::size_t> index;
  long long step = 0;

  std::size_t add(const std::string& name, Tensor4<T> value) {
    require(!index.contains(name), "invalid_argument", "duplicate parameter '" + name + "'");
    value.zero_grad();
    Param p{name, std::move(value), {}, {}};
    p.m.assign(p.value.size(), T{});
    p.v.assign(p.value.size(), T{});
    params.push_back(std::move(p));
    index[name] = params.size() - 1;
    return params.size() - 1;
  }

  Tensor4<T>& operator[](std::size_t i) { return params[i].value; }
  const Tensor4<T>& operator[](std::size_t i) const { return params[i].value; }

  std::size_t find(const std::string& name) const {
    auto it = index.find(name);
    require(it != index.end(), "invalid_argument", "no parameter '" + name + "'");
    return it->second;
  }

  void zero_grad() {
    for (auto& p : params) p.value.zero_grad();
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
  }

  double grad_norm() const {
    double acc = 0;
    for (const auto& p : params)
      for (T g : p.value.grad) acc += static_cast<double>(g) * g;
    return std::sqrt(acc);
  }
};

// ---------------------------------------------------------------------------
// Convolution (cross-correlation), weights out x in x k x k, bias 1 x out x 1 x 1.

inline int conv_out_size(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

namespace detail {

// Output columns ox with 0 <= ox*stride + kx - pad < in_w.
inline void col_range(int in_w, int out_w, int kx, int stride, int pad, int& lo, int& hi) {
  const int off = kx - pad;
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  hi = std::min(out_w, (in_w - 1 - off) / stride + 1);
  if (in_w - 1 - off < 0) hi = 0;
}

// Dot product accumulated into fixed lanes (vectorizable without
// reassociating); the tail goes to the return value.
inline constexpr int kLanes = 8;

template <class T>
T dot_lanes(const T* a, const T* b, int n, std::array<T, kLanes>& lanes) {
  int i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (int k = 0; k < kLanes; ++k) lanes[k] += a[i + k] * b[i + k];
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return tail;
}

}  // namespace detail

template <class T>
Tensor4<T> conv_forward(const Tensor4<T>& x, const Tensor4<T>& wt, const Tensor4<T>& b, int stride, int pad) {
  require(x.c == wt.c, "shape_mismatch",
          "conv input channels " + std::to_string(x.c) + " != weight " + std::to_string(wt.c));
  require(wt.h % 2 == 1 && wt.w % 2 == 1, "invalid_argument", "conv kernel must be odd");
  require(b.c == wt.n, "shape_mismatch", "conv bias size mismatch");
  const int oh = conv_out_size(x.h, wt.h, stride, pad), ow = conv_out_size(x.w, wt.w, stride, pad);
  require(oh > 0 && ow > 0, "shape_mismatch", "conv output would be empty");
  Tensor4<T> y(x.n, wt.n, oh, ow);
  for (int nb = 0; nb < x.n; ++nb)
    for (int oc = 0; oc < wt.n; ++oc) {
      T* yp = y.ch(nb, oc);
      std::fill(yp, yp + y.plane(), b.data[oc]);
      for (int ic = 0; ic < x.c; ++ic) {
        const T* xp = x.ch(nb, ic);
        for (int ky = 0; ky < wt.h; ++ky)
          for (int kx = 0; kx < wt.w; ++kx) {
            const T wv = wt.at(oc, ic, ky, kx);
            if (wv == T{}) continue;
            int lo, hi;
            detail::col_range(x.w, ow, kx, stride, pad, lo, hi);
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= x.h) continue;
              T* yr = yp + static_cast<std::size_t>(oy) * ow;
              const T* xr = xp + static_cast<std::size_t>(iy) * x.w + (kx - pad);
              if (stride == 1) {
                for (int ox = lo; ox < hi; ++ox) yr[ox] += wv * xr[ox];
              } else {
                for (int ox = lo; ox < hi; ++ox) yr[ox] += wv * xr[ox * stride];
              }
            }
          }
      }
    }
  return y;
}

// Accumulates into wt.grad and b.grad; returns dL/dx when want_input_grad.
template <class T>
Tensor4<T> conv_backward(const Tensor4<T>& x, Tensor4<T>& wt, Tensor4<T>& b, int stride, int pad,
                         const Tensor4<T>& gy, bool want_input_grad = true) {
  const int oh = gy.h, ow = gy.w;
  wt.ensure_grad();
  b.ensure_grad();
  Tensor4<T> gx;
  if (want_input_grad) gx = zeros_like(x);
  for (int nb = 0; nb < x.n; ++nb)
    for (int oc = 0; oc < wt.n; ++oc) {
      const T* gp = gy.ch(nb, oc);
      T bsum = 0;
      for (std::size_t i = 0; i < gy.plane(); ++i) bsum += gp[i];
      b.grad[oc] += bsum;
      for (int ic = 0; ic < x.c; ++ic) {
        const T* xp = x.ch(nb, ic);
        T* gxp = want_input_grad ? gx.ch(nb, ic) : nullptr;
        for (int ky = 0; ky < wt.h; ++ky)
          for (int kx = 0; kx < wt.w; ++kx) {
            const std::size_t widx = ((static_cast<std::size_t>(oc) * wt.c + ic) * wt.h + ky) * wt.w + kx;
            const T wv = wt.data[widx];
            int lo, hi;
            detail::col_range(x.w, ow, kx, stride, pad, lo, hi);
            T acc = 0;
            std::array<T, detail::kLanes> lanes{};
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= x.h) continue;
              const T* gr = gp + static_cast<std::size_t>(oy) * ow;
              const std::size_t xoff = static_cast<std::size_t>(iy) * x.w + (kx - pad);
              const T* xr = xp + xoff;
              if (stride == 1) {
                acc += detail::dot_lanes(gr + lo, xr + lo, hi - lo, lanes);
                if (gxp && wv != T{}) {
                  T* gxr = gxp + xoff;
                  for (int ox = lo; ox < hi; ++ox) gxr[ox] += wv * gr[ox];
                }
              } else {
                for (int ox = lo; ox < hi; ++ox) acc += gr[ox] * xr[ox * stride];
                if (gxp && wv != T{}) {
                  T* gxr = gxp + xoff;
                  for (int ox = lo; ox < hi; ++ox) gxr[ox * stride] += wv * gr[ox];
                }
              }
            }
            for (T v : lanes) acc += v;
            wt.grad[widx] += acc;
          }
      }
    }
  return gx;
}

// ---------------------------------------------------------------------------
// Elementwise and resampling ops.

template <class T>
Tensor4<T> leaky_relu_forward(const Tensor4<T>& x, T slope = T(0.1)) {
  Tensor4<T> y = x;
  y.grad.clear();
  for (auto& v : y.data)
    if (v < T{}) v *= slope;
  return y;
}

// Subgradient at 0 is taken as the slope.
template <class T>
Tensor4<T> leaky_relu_backward(const Tensor4<T>& x, const Tensor4<T>& gy, T slope = T(0.1)) {
  Tensor4<T> gx = gy;
  gx.grad.clear();
  for (std::size_t i = 0; i < gx.data.size(); ++i)
    if (x.data[i] <= T{}) gx.data[i] *= slope;
  return gx;
}

// 2x2 average pooling; odd trailing rows/cols are dropped.
template <class T>
Tensor4<T> avg_pool2_forward(const Tensor4<T>& x) {
  Tensor4<T> y(x.n, x.c, x.h / 2, x.w / 2);
  for (int b = 0; b < x.n; ++b)
    for (int k = 0; k < x.c; ++k)
      for (int oy = 0; oy < y.h; ++oy)
        for (int ox = 0; ox < y.w; ++ox)
          y.at(b, k, oy, ox) = T(0.25) * (x.at(b, k, 2 * oy, 2 * ox) + x.at(b, k, 2 * oy, 2 * ox + 1) +
                                          x.at(b, k, 2 * oy + 1, 2 * ox) + x.at(b, k, 2 * oy + 1, 2 * ox + 1));
  return y;
}

template <class T>
Tensor4<T> avg_pool2_backward(const Tensor4<T>& x, const Tensor4<T>& gy) {
  Tensor4<T> gx = zeros_like(x);
  for (int b = 0; b < x.n; ++b)
    for (int k = 0; k < x.c; ++k)
      for (int oy = 0; oy < gy.h; ++oy)
        for (int ox = 0; ox < gy.w; ++ox) {
          const T g = T(0.25) * gy.at(b, k, oy, ox);
          gx.at(b, k, 2 * oy, 2 * ox) += g;
          gx.at(b, k, 2 * oy, 2 * ox + 1) += g;
          gx.at(b, k, 2 * oy + 1, 2 * ox) += g;
          gx.at(b, k, 2 * oy + 1, 2 * ox + 1) += g;
        }
  return gx;
}

// Nearest-neighbour 2x upsampling to an explicit target size.
template <class T>
Tensor4<T> upsample2_forward(const Tensor4<T>& x, int out_h, int out_w) {
  Tensor4<T> y(x.n, x.c, out_h, out_w);
  for (int b = 0; b < x.n; ++b)
    for (int k = 0; k < x.c; ++k)
      for (int yy = 0; yy < out_h; ++yy)
        for (int xx = 0; xx < out_w; ++xx)
          y.at(b, k, yy, xx) = x.at(b, k, std::min(yy / 2, x.h - 1), std::min(xx / 2, x.w - 1));
  return y;
}

template <class T>
Tensor4<T> upsample2_backward(const Tensor4<T>& x, const Tensor4<T>& gy) {
  Tensor4<T> gx = zeros_like(x);
  for (int b = 0; b < gy.n; ++b)
    for (int k = 0; k < gy.c; ++k)
      for (int yy = 0; yy < gy.h; ++yy)
        for (int xx = 0; xx < gy.w; ++xx)
          gx.at(b, k, std::min(yy / 2, x.h - 1), std::min(xx / 2, x.w - 1)) += gy.at(b, k, yy, xx);
  return gx;
}

template <class T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  require(a.n == b.n && a.h == b.h && a.w == b.w, "shape_mismatch", "concat spatial mismatch");
  Tensor4<T> y(a.n, a.c + b.c, a.h, a.w);
  for (int nb = 0; nb < a.n; ++nb) {
    std::copy_n(a.ch(nb, 0), a.c * a.plane(), y.ch(nb, 0));
    std::copy_n(b.ch(nb, 0), b.c * b.plane(), y.ch(nb, a.c));
  }
  return y;
}

// Channels [first, first+count) of t.
template <class T>
Tensor4<T> slice_channels(const Tensor4<T>& t, int first, int count) {
  Tensor4<T> y(t.n, count, t.h, t.w);
  for (int nb = 0; nb < t.n; ++nb) std::copy_n(t.ch(nb, first), count * t.plane(), y.ch(nb, 0));
  return y;
}

// Channelwise spatial mean, returned as n x c x 1 x 1.
template <class T>
Tensor4<T> global_avg_pool_forward(const Tensor4<T>& x) {
  require(x.h > 0 && x.w > 0, "invalid_argument", "global_avg_pool on empty map");
  Tensor4<T> y(x.n, x.c, 1, 1);
  for (int b = 0; b < x.n; ++b)
    for (int k = 0; k < x.c; ++k) {
      double acc = 0;
      const T* p = x.ch(b, k);
      for (std::size_t i = 0; i < x.plane(); ++i) acc += p[i];
      y.at(b, k, 0, 0) = static_cast<T>(acc / static_cast<double>(x.plane()));
    }
  return y;
}

template <class T>
Tensor4<T> global_avg_pool_backward(const Tensor4<T>& x, const Tensor4<T>& gy) {
  Tensor4<T> gx = zeros_like(x);
  const T inv = static_cast<T>(1.0 / static_cast<double>(x.plane()));
  for (int b = 0; b < x.n; ++b)
    for (int k = 0; k < x.c; ++k) {
      const T g = gy.at(b, k, 0, 0) * inv;
      T* p = gx.ch(b, k);
      std::fill(p, p + x.plane(), g);
    }
  return gx;
}

// ---------------------------------------------------------------------------
// Layers bound to a ParamSet by index.

template <class T>
struct Conv2d {
  std::size_t w = 0, b = 0;
  int stride = 1, pad = 0;

  // He-uniform weights scaled by `gain`; gain 0 gives a zero layer.
  static Conv2d create(ParamSet<T>& ps, const std::string& name, int in, int out, int k, int stride, Rng& rng,
                       double gain = 1.0) {
    require(k % 2 == 1, "invalid_argument", "conv kernel must be odd");
    Conv2d layer;
    layer.stride = stride;
    layer.pad = k / 2;
    Tensor4<T> wt(out, in, k, k);
    const double bound = gain * std::sqrt(6.0 / (in * k * k));
    for (auto& v : wt.data) v = static_cast<T>(rng.uniform(-bound, bound));
    layer.w = ps.add(name + ".w", std::move(wt));
    layer.b = ps.add(name + ".b", Tensor4<T>(1, out, 1, 1));
    return layer;
  }

  Tensor4<T> forward(const ParamSet<T>& ps, const Tensor4<T>& x) const {
    return conv_forward(x, ps[w], ps[b], stride, pad);
  }
  Tensor4<T> backward(ParamSet<T>& ps, const Tensor4<T>& x, const Tensor4<T>& gy, bool want_input_grad = true) const {
    return conv_backward(x, ps[w], ps[b], stride, pad, gy, want_input_grad);
  }
};

// One learnable vector per unroll step, broadcast over H x W.
template <class T>
struct PromptTable {
  std::vector<std::size_t> ids;
  int channels = 0;

  static PromptTable create(ParamSet<T>& ps, const std::string& name, int steps, int channels, Rng& rng,
                            double scale = 0.1) {
    PromptTable tab;
    tab.channels = channels;
    for (int t = 0; t < steps; ++t) {
      Tensor4<T> p(1, channels, 1, 1);
      for (auto& v : p.data) v = static_cast<T>(rng.normal(0, scale));
      tab.ids.push_back(ps.add(name + "." + std::to_string(t), std::move(p)));
    }
    return tab;
  }

  int steps() const { return static_cast<int>(ids.size()); }

  Tensor4<T> forward(const ParamSet<T>& ps, int step, int h, int w) const {
    require(step >= 0 && step < steps(), "invalid_argument", "prompt step out of range");
    const auto& p = ps[ids[step]];
    Tensor4<T> y(1, channels, h, w);
    for (int k = 0; k < channels; ++k) std::fill(y.ch(0, k), y.ch(0, k) + y.plane(), p.data[k]);
    return y;
  }

  void backward(ParamSet<T>& ps, int step, const Tensor4<T>& gy) const {
    require(step >= 0 && step < steps(), "invalid_argument", "prompt step out of range");
    auto& p = ps[ids[step]];
    p.ensure_grad();
    for (int k = 0; k < channels; ++k) {
      T acc = 0;
      for (std::size_t i = 0; i < gy.plane(); ++i) acc += gy.ch(0, k)[i];
      p.grad[k] += acc;
    }
  }
};

// ---------------------------------------------------------------------------
// Optimization.

struct AdamWOptions {
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

// Decoupled weight decay: p -= lr*wd*p, then the bias-corrected Adam step.
template <class T>
void adamw_step(ParamSet<T>& ps, const AdamWOptions& opt) {
  for (const auto& p : ps.params)
    for (T g : p.value.grad)
      require(std::isfinite(static_cast<double>(g)), "non_finite",
              "NaN/Inf gradient in '" + p.name + "'");
  ++ps.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(ps.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(ps.step));
  for (auto& p : ps.params) {
    auto& val = p.value.data;
    const auto& grad = p.value.grad;
    for (std::size_t i = 0; i < val.size(); ++i) {
      const double g = grad[i];
      double x = val[i];
      x -= opt.lr * opt.weight_decay * x;
      const double m = opt.beta1 * p.m[i] + (1.0 - opt.beta1) * g;
      const double v = opt.beta2 * p.v[i] + (1.0 - opt.beta2) * g * g;
      p.m[i] = static_cast<T>(m);
      p.v[i] = static_cast<T>(v);
      x -= opt.lr * (m / bc1) / (std::sqrt(v / bc2) + opt.eps);
      val[i] = static_cast<T>(x);
    }
  }
}

// Scales all gradients so the global L2 norm is at most max_norm.
template <class T>
double clip_grad_norm(ParamSet<T>& ps, double max_norm = 0.1) {
  const double norm = ps.grad_norm();
  if (norm <= max_norm || norm == 0.0) return 1.0;
  const double scale = max_norm / norm;
  for (auto& p : ps.params)
    for (auto& g : p.value.grad) g = static_cast<T>(g * scale);
  return scale;
}

// base_lr * gamma^floor(epoch / step_size)
inline double lr_schedule(int epoch, double base_lr = 0.002, int step_size = 11, double gamma = 0.1) {
  require(epoch >= 0, "invalid_argument", "epoch must be >= 0");
  return base_lr * std::pow(gamma, epoch / step_size);
}

// ---------------------------------------------------------------------------
// Finite-difference checking.

struct GradCheckOptions {
  double h = 1e-6;
  std::size_t max_coords = 400;  // above this, a seeded random subset is checked
  std::uint64_t seed = 7;
};

// Central differences of `loss` over the coordinates of x against the
// analytic gradient. Error per coordinate is |a - n| / max(|a|, |n|, s)
// with s = 1e-3 * max|a| over checked coordinates.
inline double grad_check(const std::function<double()>& loss, std::span<double> x, std::span<const double> analytic,
                         const GradCheckOptions& opt = {}) {
  require(x.size() == analytic.size(), "shape_mismatch", "grad_check size mismatch");
  std::vector<std::size_t> coords;
  if (x.size() <= opt.max_coords) {
    for (std::size_t i = 0; i < x.size(); ++i) coords.push_back(i);
  } else {
    Rng rng(opt.seed);
    std::vector<std::size_t> all(x.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    for (std::size_t i = 0; i < opt.max_coords; ++i) {
      std::swap(all[i], all[i + rng.below(all.size() - i)]);
      coords.push_back(all[i]);
    }
  }
  std::vector<double> numeric(coords.size());
  double amax = 0;
  for (std::size_t j = 0; j < coords.size(); ++j) {
    const std::size_t i = coords[j];
    const double x0 = x[i];
    x[i] = x0 + opt.h;
    const double fp = loss();
    x[i] = x0 - opt.h;
    const double fm = loss();
    x[i] = x0;
    numeric[j] = (fp - fm) / (2 * opt.h);
    amax = std::max(amax, std::abs(analytic[i]));
  }
  const double floor = std::max(1e-3 * amax, 1e-300);
  double worst = 0;
  for (std::size_t j = 0; j < coords.size(); ++j) {
    const double a = analytic[coords[j]], n = numeric[j];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
  }
  return worst;
}

}  // namespace genre
