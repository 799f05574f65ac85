#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <deque>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "array.hpp"
#include "error.hpp"
#include "mri.hpp"
#include "numerics.hpp"

namespace genre {

// ---------------------------------------------------------------------------
// SSIM: mean over all valid 7x7 uniform windows, K1 = 0.01, K2 = 0.03,
// population (1/N) local statistics.

inline constexpr int kSsimWindow = 7;

template <class T>
struct SsimResult {
  double value = 0;
  RealImage<T> grad_x;  // d ssim / d x, empty unless requested
};

namespace detail {

// Summed-area table with a zero first row/column.
struct Integral {
  int h, w;
  std::vector<double> s;
  template <class F>
  Integral(int h_, int w_, F&& f) : h(h_), w(w_), s(static_cast<std::size_t>(h_ + 1) * (w_ + 1), 0.0) {
    for (int y = 0; y < h; ++y) {
      double row = 0;
      for (int x = 0; x < w; ++x) {
        row += f(y, x);
        s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
      }
    }
  }
  // Sum over rows [y0, y1), cols [x0, x1).
  double box(int y0, int x0, int y1, int x1) const {
    return s[y1 * (w + 1) + x1] - s[y0 * (w + 1) + x1] - s[y1 * (w + 1) + x0] + s[y0 * (w + 1) + x0];
  }
};

}  // namespace detail

template <class T>
SsimResult<T> ssim_eval(const RealImage<T>& x, const RealImage<T>& y, double data_range, bool want_grad) {
  require(x.same_shape(y), "shape_mismatch",
          "ssim shape " + shape_str(x.height(), x.width()) + " vs " + shape_str(y.height(), y.width()));
  require(data_range > 0, "invalid_argument", "ssim data_range must be > 0");
  const int h = x.height(), w = x.width(), K = kSsimWindow;
  require(h >= K && w >= K, "invalid_argument", "ssim needs images of at least 7x7");
  const double C1 = (0.01 * data_range) * (0.01 * data_range);
  const double C2 = (0.03 * data_range) * (0.03 * data_range);
  const double N = K * K;

  auto X = [&](int r, int c) { return static_cast<double>(x(r, c)); };
  auto Y = [&](int r, int c) { return static_cast<double>(y(r, c)); };
  detail::Integral sx(h, w, X), sy(h, w, Y);
  detail::Integral sxx(h, w, [&](int r, int c) { return X(r, c) * X(r, c); });
  detail::Integral syy(h, w, [&](int r, int c) { return Y(r, c) * Y(r, c); });
  detail::Integral sxy(h, w, [&](int r, int c) { return X(r, c) * Y(r, c); });

  const int ph = h - K + 1, pw = w - K + 1;
  const double P = static_cast<double>(ph) * pw;
  std::vector<double> alpha, beta, gamma;
  if (want_grad) {
    alpha.resize(static_cast<std::size_t>(ph) * pw);
    beta.resize(alpha.size());
    gamma.resize(alpha.size());
  }
  double total = 0;
  for (int wy = 0; wy < ph; ++wy)
    for (int wx = 0; wx < pw; ++wx) {
      const double mx = sx.box(wy, wx, wy + K, wx + K) / N;
      const double my = sy.box(wy, wx, wy + K, wx + K) / N;
      const double vx = sxx.box(wy, wx, wy + K, wx + K) / N - mx * mx;
      const double vy = syy.box(wy, wx, wy + K, wx + K) / N - my * my;
      const double cxy = sxy.box(wy, wx, wy + K, wx + K) / N - mx * my;
      const double A1 = 2 * mx * my + C1, A2 = 2 * cxy + C2;
      const double B1 = mx * mx + my * my + C1, B2 = vx + vy + C2;
      const double S = (A1 * A2) / (B1 * B2);
      total += S;
      if (want_grad) {
        const std::size_t i = static_cast<std::size_t>(wy) * pw + wx;
        const double d = N * B1 * B2;
        beta[i] = 2 * A1 / d;
        gamma[i] = -2 * S / (N * B2);
        alpha[i] = 2 * my * A2 / d - 2 * A1 * my / d - 2 * S * mx / (N * B1) + 2 * S * mx / (N * B2);
      }
    }
  SsimResult<T> res;
  res.value = total / P;
  if (!want_grad) return res;

  detail::Integral ia(ph, pw, [&](int r, int c) { return alpha[r * pw + c]; });
  detail::Integral ib(ph, pw, [&](int r, int c) { return beta[r * pw + c]; });
  detail::Integral ig(ph, pw, [&](int r, int c) { return gamma[r * pw + c]; });
  res.grad_x = RealImage<T>(h, w);
  for (int r = 0; r < h; ++r) {
    const int y0 = std::max(0, r - K + 1), y1 = std::min(ph, r + 1);
    for (int c = 0; c < w; ++c) {
      const int x0 = std::max(0, c - K + 1), x1 = std::min(pw, c + 1);
      const double g = ia.box(y0, x0, y1, x1) + Y(r, c) * ib.box(y0, x0, y1, x1) + X(r, c) * ig.box(y0, x0, y1, x1);
      res.grad_x(r, c) = static_cast<T>(g / P);
    }
  }
  return res;
}

template <class T>
double ssim(const RealImage<T>& x, const RealImage<T>& y, double data_range) {
  return ssim_eval(x, y, data_range, false).value;
}

// ---------------------------------------------------------------------------
// Edge-aware region.

// Sobel magnitude with replicate padding. Each response is a weighted sum
// of pixel differences, so flat regions (borders included) give exactly 0.
template <class T>
RealImage<T> edge_magnitude(const RealImage<T>& gt) {
  const int h = gt.height(), w = gt.width();
  auto p = [&](int y, int x) { return gt(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1)); };
  RealImage<T> m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const T gx = (p(y - 1, x + 1) - p(y - 1, x - 1)) + 2 * (p(y, x + 1) - p(y, x - 1)) +
                   (p(y + 1, x + 1) - p(y + 1, x - 1));
      const T gy = (p(y + 1, x - 1) - p(y - 1, x - 1)) + 2 * (p(y + 1, x) - p(y - 1, x)) +
                   (p(y + 1, x + 1) - p(y - 1, x + 1));
      m(y, x) = std::sqrt(gx * gx + gy * gy);
    }
  return m;
}

// Absolute: B = [M_s > value]. Percentile: the threshold is the given
// percentile (0..100) of M_s.
struct EarThreshold {
  enum class Mode : std::uint8_t { Absolute, Percentile } mode = Mode::Absolute;
  double value = 0.0;
};

struct EdgeMask {
  Array2<std::uint8_t> b;
  double tau = 0;

  bool empty() const {
    return std::none_of(b.vec().begin(), b.vec().end(), [](std::uint8_t v) { return v != 0; });
  }
};

template <class T>
EdgeMask ear_mask(const RealImage<T>& gt, EarThreshold thr = {}) {
  const auto ms = conv2d_same(edge_magnitude(gt), box_kernel<T>(5));
  EdgeMask out{Array2<std::uint8_t>(gt.height(), gt.width()), thr.value};
  if (thr.mode == EarThreshold::Mode::Percentile) {
    std::vector<double> v(ms.vec().begin(), ms.vec().end());
    std::sort(v.begin(), v.end());
    const double q = std::clamp(thr.value, 0.0, 100.0) / 100.0 * (v.size() - 1);
    out.tau = v[static_cast<std::size_t>(std::floor(q))];
  }
  for (std::size_t i = 0; i < ms.size(); ++i) out.b[i] = static_cast<double>(ms[i]) > out.tau ? 1 : 0;
  return out;
}

template <class T>
RealImage<T> apply_edge_mask(const EdgeMask& m, const RealImage<T>& img) {
  RealImage<T> out = img;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!m.b[i]) out[i] = T{};
  return out;
}

template <class T>
struct EarResult {
  double value = 0;
  bool empty_mask = false;  // degenerate: no edges, loss reported as 0
  RealImage<T> grad_rec;
  RealImage<T> grad_gt;  // only when requested
};

// 1 - ssim(B (.) rec, B (.) gt) with B from gt alone; B is held constant.
template <class T>
EarResult<T> ear_loss(const RealImage<T>& rec, const RealImage<T>& gt, double data_range, EarThreshold thr = {},
                      bool want_gt_grad = false) {
  require(rec.same_shape(gt), "shape_mismatch", "ear_loss shape mismatch");
  EarResult<T> res;
  const EdgeMask mask = ear_mask(gt, thr);
  res.grad_rec = RealImage<T>(rec.height(), rec.width());
  if (want_gt_grad) res.grad_gt = RealImage<T>(rec.height(), rec.width());
  if (mask.empty()) {
    res.empty_mask = true;
    return res;
  }
  const auto mr = apply_edge_mask(mask, rec), mg = apply_edge_mask(mask, gt);
  auto s = ssim_eval(mr, mg, data_range, true);
  res.value = 1.0 - s.value;
  for (std::size_t i = 0; i < rec.size(); ++i) res.grad_rec[i] = mask.b[i] ? -s.grad_x[i] : T{};
  if (want_gt_grad) {
    auto sg = ssim_eval(mg, mr, data_range, true);
    for (std::size_t i = 0; i < rec.size(); ++i) res.grad_gt[i] = mask.b[i] ? -sg.grad_x[i] : T{};
  }
  return res;
}

// ---------------------------------------------------------------------------
// k-space physics terms: magnitude MSE plus wrapped-phase MSE over the
// entries where |k_gt| > 1e-3 * max|k_gt|.

inline constexpr double kPhaseSupport = 1e-3;

template <class R>
struct PhysResult {
  double magnitude = 0;
  double phase = 0;
  std::vector<std::complex<R>> grad;  // dL/dk_pred (same layout as input)
};

template <class R>
PhysResult<R> kspace_phys_loss(std::span<const std::complex<R>> pred, std::span<const std::complex<R>> gt) {
  require(pred.size() == gt.size() && !pred.empty(), "shape_mismatch", "physics loss size mismatch");
  PhysResult<R> res;
  res.grad.assign(pred.size(), {});
  double gmax = 0;
  for (const auto& g : gt) gmax = std::max(gmax, static_cast<double>(std::abs(g)));
  const double support = kPhaseSupport * gmax;
  std::size_t retained = 0;
  for (const auto& g : gt) retained += static_cast<double>(std::abs(g)) > support;
  const double n_all = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::complex<double> p(pred[i]), g(gt[i]);
    const double ap = std::abs(p), ag = std::abs(g);
    const double dm = ap - ag;
    res.magnitude += dm * dm / n_all;
    std::complex<double> gr{};
    if (ap > 0) gr += (2 * dm / n_all) * p / ap;
    if (ag > support) {
      const std::complex<double> q = p * std::conj(g);
      const double d = std::atan2(q.imag(), q.real());
      res.phase += d * d / static_cast<double>(retained);
      const double p2 = std::norm(p);
      if (p2 > 0) gr += (2 * d / static_cast<double>(retained)) * std::complex<double>(0, 1) * p / p2;
    }
    res.grad[i] = std::complex<R>(static_cast<R>(gr.real()), static_cast<R>(gr.imag()));
  }
  return res;
}

template <class R>
struct FidelityResult {
  double phys_magnitude = 0;
  double phys_phase = 0;
  double ssim_term = 0;
  double total() const { return phys_magnitude + phys_phase + ssim_term; }
  CVolume<R> grad_pred;  // 1 x coils x h x w
};

// Fidelity on one frame of predicted / ground-truth k-space: physics terms
// plus 1 - ssim of the coil-combined magnitudes. Sensitivities are fixed.
template <class R>
FidelityResult<R> fidelity_loss(const KSpaceVolume<R>& k_pred, int pred_frame, const KSpaceVolume<R>& k_gt,
                                int gt_frame, const SensitivityMaps<R>& sens, double data_range = 1.0) {
  require(k_pred.coils() == k_gt.coils() && k_pred.height() == k_gt.height() && k_pred.width() == k_gt.width(),
          "shape_mismatch", "fidelity_loss shape mismatch");
  FidelityResult<R> res;
  auto phys = kspace_phys_loss<R>(k_pred.frame(pred_frame), k_gt.frame(gt_frame));
  res.phys_magnitude = phys.magnitude;
  res.phys_phase = phys.phase;
  res.grad_pred = CVolume<R>(1, k_pred.coils(), k_pred.height(), k_pred.width());
  std::copy(phys.grad.begin(), phys.grad.end(), res.grad_pred.vec().begin());
  auto rec = MagnitudeCombine<R>::forward(k_pred, pred_frame, sens);
  auto gt = MagnitudeCombine<R>::forward(k_gt, gt_frame, sens);
  auto s = ssim_eval(rec.magnitude, gt.magnitude, data_range, true);
  res.ssim_term = 1.0 - s.value;
  RealImage<R> g(s.grad_x.height(), s.grad_x.width());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = -s.grad_x[i];
  rec.backward(g, sens, res.grad_pred.frame(0), nullptr);
  return res;
}

// ---------------------------------------------------------------------------
// Diagonal Gaussians and symmetric KL.

inline constexpr double kVarianceFloor = 1e-5;

struct GaussianSummary {
  std::vector<double> mu;
  std::vector<double> var;
};

// Mean and population variance of the given vectors, variance floored.
inline GaussianSummary fit_gaussian(const std::vector<std::vector<double>>& xs) {
  require(!xs.empty(), "invalid_argument", "fit_gaussian needs samples");
  const std::size_t d = xs.front().size();
  GaussianSummary g{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (const auto& x : xs) {
    require(x.size() == d, "shape_mismatch", "feature dimension mismatch");
    for (std::size_t k = 0; k < d; ++k) g.mu[k] += x[k];
  }
  for (auto& m : g.mu) m /= static_cast<double>(xs.size());
  for (const auto& x : xs)
    for (std::size_t k = 0; k < d; ++k) g.var[k] += (x[k] - g.mu[k]) * (x[k] - g.mu[k]);
  for (auto& v : g.var) v = std::max(v / static_cast<double>(xs.size()), kVarianceFloor);
  return g;
}

// KL(a||b) + KL(b||a) for diagonal Gaussians:
// 1/2 sum [va/vb + vb/va + (ma-mb)^2 (1/va + 1/vb) - 2]
inline double sym_kl(const GaussianSummary& a, const GaussianSummary& b) {
  require(a.mu.size() == b.mu.size() && a.var.size() == a.mu.size() && b.var.size() == b.mu.size(),
          "shape_mismatch", "sym_kl dimension mismatch");
  double acc = 0;
  for (std::size_t k = 0; k < a.mu.size(); ++k) {
    const double dm = a.mu[k] - b.mu[k];
    acc += a.var[k] / b.var[k] + b.var[k] / a.var[k] + dm * dm * (1.0 / a.var[k] + 1.0 / b.var[k]) - 2.0;
  }
  return 0.5 * acc;
}

// d sym_kl / d (a.mu, a.var)
inline void sym_kl_grad_a(const GaussianSummary& a, const GaussianSummary& b, std::vector<double>& g_mu,
                          std::vector<double>& g_var) {
  const std::size_t d = a.mu.size();
  g_mu.assign(d, 0.0);
  g_var.assign(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    const double dm = a.mu[k] - b.mu[k];
    g_mu[k] = dm * (1.0 / a.var[k] + 1.0 / b.var[k]);
    g_var[k] = 0.5 * (1.0 / b.var[k] - b.var[k] / (a.var[k] * a.var[k]) - dm * dm / (a.var[k] * a.var[k]));
  }
}

// Per (layer, domain) sliding windows of pooled feature vectors.
class FeatureBank {
 public:
  FeatureBank() = default;
  FeatureBank(int layers, int domains, int capacity)
      : layers_(layers), domains_(domains), capacity_(capacity),
        buf_(static_cast<std::size_t>(layers) * domains), newest_(layers, -1) {
    require(layers > 0 && domains > 0 && capacity > 0, "invalid_argument", "feature bank sizes must be positive");
  }

  int layers() const { return layers_; }
  int domains() const { return domains_; }
  int capacity() const { return capacity_; }

  // Ring insertion; oldest entry evicted beyond capacity.
  void update(int layer, int domain, std::vector<double> z) {
    require(layer >= 0 && layer < layers_, "invalid_argument", "feature bank layer out of range");
    require(domain >= 0 && domain < domains_, "invalid_argument", "feature bank domain out of range");
    auto& q = slot(layer, domain);
    q.push_back(std::move(z));
    while (static_cast<int>(q.size()) > capacity_) q.pop_front();
    newest_[layer] = domain;
  }

  const std::deque<std::vector<double>>& at(int layer, int domain) const {
    return buf_[static_cast<std::size_t>(layer) * domains_ + domain];
  }
  // Domain that received the most recent insertion at this layer (-1: none).
  int newest_domain(int layer) const { return newest_[layer]; }
  // Restores newest_domain when rebuilding a bank from a checkpoint.
  void set_newest(int layer, int domain) {
    require(layer >= 0 && layer < layers_ && domain >= -1 && domain < domains_, "invalid_argument",
            "feature bank index out of range");
    newest_[layer] = domain;
  }

  friend bool operator==(const FeatureBank&, const FeatureBank&) = default;

 private:
  std::deque<std::vector<double>>& slot(int layer, int domain) {
    return buf_[static_cast<std::size_t>(layer) * domains_ + domain];
  }

  int layers_ = 0, domains_ = 0, capacity_ = 0;
  std::vector<std::deque<std::vector<double>>> buf_;
  std::vector<int> newest_;
};

struct SdaLayerResult {
  double value = 0;
  int pairs = 0;
  std::vector<double> grad_newest;  // d value / d newest vector (empty if not eligible)
};

// Mean symmetric KL over eligible domain pairs (>= 2 vectors each) at one
// layer; gradient is taken w.r.t. the newest vector only.
inline SdaLayerResult sda_layer(const FeatureBank& bank, int layer) {
  SdaLayerResult res;
  std::vector<int> eligible;
  std::vector<GaussianSummary> fits(bank.domains());
  for (int d = 0; d < bank.domains(); ++d) {
    const auto& q = bank.at(layer, d);
    if (q.size() >= 2) {
      eligible.push_back(d);
      fits[d] = fit_gaussian({q.begin(), q.end()});
    }
  }
  if (eligible.size() < 2) return res;
  double acc = 0;
  for (std::size_t i = 0; i < eligible.size(); ++i)
    for (std::size_t j = i + 1; j < eligible.size(); ++j) {
      acc += sym_kl(fits[eligible[i]], fits[eligible[j]]);
      ++res.pairs;
    }
  res.value = acc / res.pairs;

  const int nd = bank.newest_domain(layer);
  if (nd < 0 || std::find(eligible.begin(), eligible.end(), nd) == eligible.end()) return res;
  const auto& q = bank.at(layer, nd);
  const GaussianSummary& a = fits[nd];
  const std::size_t dim = a.mu.size();
  const double n = static_cast<double>(q.size());
  std::vector<double> raw_var(dim, 0.0);
  for (const auto& x : q)
    for (std::size_t k = 0; k < dim; ++k) raw_var[k] += (x[k] - a.mu[k]) * (x[k] - a.mu[k]) / n;
  std::vector<double> g_mu(dim, 0.0), g_var(dim, 0.0), gm, gv;
  for (int other : eligible) {
    if (other == nd) continue;
    sym_kl_grad_a(a, fits[other], gm, gv);
    for (std::size_t k = 0; k < dim; ++k) {
      g_mu[k] += gm[k];
      g_var[k] += gv[k];
    }
  }
  const auto& newest = q.back();
  res.grad_newest.assign(dim, 0.0);
  for (std::size_t k = 0; k < dim; ++k) {
    double g = g_mu[k] / n;
    if (raw_var[k] > kVarianceFloor) g += g_var[k] * 2.0 * (newest[k] - a.mu[k]) / n;
    res.grad_newest[k] = g / res.pairs;
  }
  return res;
}

struct SdaResult {
  double value = 0;
  bool not_enough_samples = true;
  std::vector<std::vector<double>> grad_newest;  // per layer
};

// Sum over layers of the per-layer domain-pair mean.
inline SdaResult sda_loss(const FeatureBank& bank) {
  SdaResult res;
  res.grad_newest.resize(bank.layers());
  for (int l = 0; l < bank.layers(); ++l) {
    auto lr = sda_layer(bank, l);
    if (lr.pairs > 0) res.not_enough_samples = false;
    res.value += lr.value;
    res.grad_newest[l] = std::move(lr.grad_newest);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Adversarial BCE on logits (squashed internally).

template <class T>
struct BceResult {
  double value = 0;
  std::vector<T> grad;  // d loss / d logits
};

template <class T>
BceResult<T> bce_with_logits(std::span<const T> logits, double label) {
  require(!logits.empty(), "invalid_argument", "bce on empty prediction");
  BceResult<T> res;
  res.grad.resize(logits.size());
  const double n = static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits[i];
    res.value += (std::max(x, 0.0) - x * label + std::log1p(std::exp(-std::abs(x)))) / n;
    const double sig = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    res.grad[i] = static_cast<T>((sig - label) / n);
  }
  return res;
}

// Label conventions as used by the adversarial loop: real -> 0, fake -> 1.
inline constexpr double kLabelReal = 0.0;
inline constexpr double kLabelFake = 1.0;

// ---------------------------------------------------------------------------
// Metrics.

template <class T>
double psnr(const RealImage<T>& rec, const RealImage<T>& gt) {
  require(rec.same_shape(gt), "shape_mismatch", "psnr shape mismatch");
  double mse = 0, peak = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double d = static_cast<double>(rec[i]) - gt[i];
    mse += d * d;
    peak = std::max(peak, static_cast<double>(gt[i]));
  }
  mse /= static_cast<double>(gt.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

template <class T>
double nmse(const RealImage<T>& rec, const RealImage<T>& gt) {
  require(rec.same_shape(gt), "shape_mismatch", "nmse shape mismatch");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double d = static_cast<double>(rec[i]) - gt[i];
    num += d * d;
    den += static_cast<double>(gt[i]) * gt[i];
  }
  require(den > 0, "invalid_argument", "nmse undefined for all-zero ground truth");
  return num / den;
}

}  // namespace genre
