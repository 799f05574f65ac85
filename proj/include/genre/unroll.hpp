#pragma once

#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "array.hpp"
#include "diffnet.hpp"
#include "error.hpp"
#include "fft.hpp"
#include "mri.hpp"
#include "rng.hpp"
#include "sampling.hpp"

namespace genre {

struct GeneratorConfig {
  int unrolls = 4;  // 16 in the full-size configuration
  int base_channels = 8;
  int prompt_channels = 4;
  int adjacent = 5;
  int acs_lines = 16;
  bool residual = true;
  bool sme_refiner = true;
  double slope = 0.1;

  void validate() const {
    require(unrolls >= 1, "invalid_argument", "unrolls must be >= 1");
    require(adjacent >= 1 && adjacent % 2 == 1, "invalid_argument", "adjacent must be odd");
    require(base_channels >= 1 && prompt_channels >= 0 && acs_lines >= 1, "invalid_argument",
            "channel / acs counts must be positive");
  }
};

// Complex frames <-> interleaved (real, imag) channels of a 1 x 2F x H x W tensor.
template <class T>
void complex_to_channels(std::span<const std::complex<T>> plane, Tensor4<T>& t, int first_channel) {
  T* re = t.ch(0, first_channel);
  T* im = t.ch(0, first_channel + 1);
  for (std::size_t i = 0; i < plane.size(); ++i) {
    re[i] = plane[i].real();
    im[i] = plane[i].imag();
  }
}

template <class T>
void channels_to_complex(const Tensor4<T>& t, int batch, int first_channel, std::span<std::complex<T>> plane) {
  const T* re = t.ch(batch, first_channel);
  const T* im = t.ch(batch, first_channel + 1);
  for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = {re[i], im[i]};
}

// Two-scale encoder-decoder producing a feature map (no activation on the
// output), plus a 1x1 head mapping features to a (real, imag) image.
template <class T>
struct Reconstructor {
  Conv2d<T> e1a, e1b, e2a, e2b, d1, d2, head;
  T slope = T(0.1);

  struct Cache {
    Tensor4<T> x, a1, h1, a1b, e1, p, a2, h2, a2b, e2, u, cat, a3, h3;
  };

  static Reconstructor create(ParamSet<T>& ps, const std::string& name, int in_ch, int base, Rng& rng, T slope) {
    Reconstructor r;
    r.slope = slope;
    r.e1a = Conv2d<T>::create(ps, name + ".e1a", in_ch, base, 3, 1, rng);
    r.e1b = Conv2d<T>::create(ps, name + ".e1b", base, base, 3, 1, rng);
    r.e2a = Conv2d<T>::create(ps, name + ".e2a", base, 2 * base, 3, 1, rng);
    r.e2b = Conv2d<T>::create(ps, name + ".e2b", 2 * base, 2 * base, 3, 1, rng);
    r.d1 = Conv2d<T>::create(ps, name + ".d1", 3 * base, base, 3, 1, rng);
    r.d2 = Conv2d<T>::create(ps, name + ".d2", base, base, 3, 1, rng, 0.5);
    // Zero head: an untrained generator reduces to pure data consistency.
    r.head = Conv2d<T>::create(ps, name + ".head", base, 2, 1, 1, rng, 0.0);
    return r;
  }

  Tensor4<T> features(const ParamSet<T>& ps, Tensor4<T> x, Cache& c) const {
    c.x = std::move(x);
    c.a1 = e1a.forward(ps, c.x);
    c.h1 = leaky_relu_forward(c.a1, slope);
    c.a1b = e1b.forward(ps, c.h1);
    c.e1 = leaky_relu_forward(c.a1b, slope);
    c.p = avg_pool2_forward(c.e1);
    c.a2 = e2a.forward(ps, c.p);
    c.h2 = leaky_relu_forward(c.a2, slope);
    c.a2b = e2b.forward(ps, c.h2);
    c.e2 = leaky_relu_forward(c.a2b, slope);
    c.u = upsample2_forward(c.e2, c.e1.h, c.e1.w);
    c.cat = concat_channels(c.u, c.e1);
    c.a3 = d1.forward(ps, c.cat);
    c.h3 = leaky_relu_forward(c.a3, slope);
    return d2.forward(ps, c.h3);
  }

  // dL/dfeatures -> dL/dx, accumulating parameter gradients.
  Tensor4<T> features_backward(ParamSet<T>& ps, const Cache& c, const Tensor4<T>& g_out) const {
    auto g = d2.backward(ps, c.h3, g_out);
    g = leaky_relu_backward(c.a3, g, slope);
    g = d1.backward(ps, c.cat, g);
    const int uc = c.u.c;
    auto g_u = slice_channels(g, 0, uc);
    auto g_e1 = slice_channels(g, uc, g.c - uc);
    auto g_e2 = upsample2_backward(c.e2, g_u);
    g_e2 = leaky_relu_backward(c.a2b, g_e2, slope);
    g_e2 = e2b.backward(ps, c.h2, g_e2);
    g_e2 = leaky_relu_backward(c.a2, g_e2, slope);
    g_e2 = e2a.backward(ps, c.p, g_e2);
    add_into(g_e1.data, avg_pool2_backward(c.e1, g_e2).data);
    g_e1 = leaky_relu_backward(c.a1b, g_e1, slope);
    g_e1 = e1b.backward(ps, c.h1, g_e1);
    g_e1 = leaky_relu_backward(c.a1, g_e1, slope);
    return e1a.backward(ps, c.x, g_e1);
  }
};

// Residual refiner for the ACS sensitivity estimate, applied per coil to
// (real, imag) channels. Zero-initialized output layer.
template <class T>
struct SensitivityRefiner {
  Conv2d<T> c1, c2;
  T slope = T(0.1);

  struct Cache {
    Tensor4<T> x, a1, h1;
  };

  static SensitivityRefiner create(ParamSet<T>& ps, const std::string& name, int hidden, Rng& rng, T slope) {
    SensitivityRefiner r;
    r.slope = slope;
    r.c1 = Conv2d<T>::create(ps, name + ".c1", 2, hidden, 3, 1, rng);
    r.c2 = Conv2d<T>::create(ps, name + ".c2", hidden, 2, 3, 1, rng, 0.0);
    return r;
  }

  // u = base + net(base)
  CVolume<T> forward(const ParamSet<T>& ps, const CVolume<T>& base, Cache& c) const {
    const int C = base.coils();
    c.x = Tensor4<T>(C, 2, base.height(), base.width());
    for (int k = 0; k < C; ++k) {
      auto s = base.slice(0, k);
      T* re = c.x.ch(k, 0);
      T* im = c.x.ch(k, 1);
      for (std::size_t i = 0; i < s.size(); ++i) {
        re[i] = s[i].real();
        im[i] = s[i].imag();
      }
    }
    c.a1 = c1.forward(ps, c.x);
    c.h1 = leaky_relu_forward(c.a1, slope);
    const auto out = c2.forward(ps, c.h1);
    CVolume<T> u = base;
    for (int k = 0; k < C; ++k) {
      auto s = u.slice(0, k);
      const T* re = out.ch(k, 0);
      const T* im = out.ch(k, 1);
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += std::complex<T>(re[i], im[i]);
    }
    return u;
  }

  void backward(ParamSet<T>& ps, const Cache& c, const CVolume<T>& g_u) const {
    Tensor4<T> g(g_u.coils(), 2, g_u.height(), g_u.width());
    for (int k = 0; k < g_u.coils(); ++k) {
      auto s = g_u.slice(0, k);
      T* re = g.ch(k, 0);
      T* im = g.ch(k, 1);
      for (std::size_t i = 0; i < s.size(); ++i) {
        re[i] = s[i].real();
        im[i] = s[i].imag();
      }
    }
    auto gh = c2.backward(ps, c.h1, g);
    gh = leaky_relu_backward(c.a1, gh, slope);
    c1.backward(ps, c.x, gh, false);
  }
};

// Per-step record of the unrolled forward pass.
template <class T>
struct UnrollStep {
  CVolume<T> coil_images;   // I_MC: adjacent x coils
  Tensor4<T> x_in;          // reconstructor input (I_SC channels + prompt)
  typename Reconstructor<T>::Cache cache;
  Tensor4<T> features;      // F(t) after the residual add
  ComplexImage<T> update;   // I_RF: head output image
  std::vector<double> pooled;  // z(t)
};

template <class T>
struct UnrollTrace {
  SensitivityMaps<T> sens;
  CVolume<T> sens_base;     // RSS-normalized ACS estimate
  CVolume<T> sens_refined;  // before re-normalization
  typename SensitivityRefiner<T>::Cache refiner_cache;
  KSpaceVolume<T> k0;
  SamplingMask mask;
  std::vector<KSpaceVolume<T>> k;  // k[0] = k0, k[t+1] after step t
  std::vector<UnrollStep<T>> steps;
  ComplexImage<T> final_image;     // coil-combined ifft2c of k[T] central

  int unrolls() const { return static_cast<int>(steps.size()); }
  int central() const { return k0.central_index(); }
};

// Upstream gradients handed to Generator::backward.
template <class T>
struct GeneratorGrads {
  std::vector<CVolume<T>> k_central;      // per step: dL/dk(t+1) central frame, 1 x coils
  std::vector<std::vector<double>> pooled;  // per step: dL/dz(t), may be empty
  CVolume<T> sens;                          // extra dL/ds, may be empty

  static GeneratorGrads zeros(const UnrollTrace<T>& tr) {
    GeneratorGrads g;
    const auto& k = tr.k0;
    for (int t = 0; t < tr.unrolls(); ++t) g.k_central.emplace_back(1, k.coils(), k.height(), k.width());
    g.pooled.resize(tr.unrolls());
    g.sens = CVolume<T>(1, k.coils(), k.height(), k.width());
    return g;
  }
};

// Residual unrolled generator: sensitivity estimation, then T stages of
// reconstructor + learnable-step data consistency. Parameters cover the
// generator and the sensitivity refiner.
template <class T>
class Generator {
 public:
  using cx = std::complex<T>;

  static Generator create(const GeneratorConfig& cfg, Rng& rng) {
    cfg.validate();
    Generator g;
    g.cfg_ = cfg;
    const int in_ch = 2 * cfg.adjacent + cfg.prompt_channels;
    for (int t = 0; t < cfg.unrolls; ++t)
      g.recon_.push_back(Reconstructor<T>::create(g.params_, "gen.recon" + std::to_string(t), in_ch,
                                                  cfg.base_channels, rng, static_cast<T>(cfg.slope)));
    g.prompts_ = PromptTable<T>::create(g.params_, "gen.prompt", cfg.unrolls, cfg.prompt_channels, rng);
    for (int t = 0; t < cfg.unrolls; ++t)
      g.eta_.push_back(g.params_.add("gen.eta." + std::to_string(t), Tensor4<T>(1, 1, 1, 1, T(1))));
    if (cfg.sme_refiner)
      g.refiner_ = SensitivityRefiner<T>::create(g.params_, "sme", 8, rng, static_cast<T>(cfg.slope));
    return g;
  }

  const GeneratorConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  const Reconstructor<T>& reconstructor(int t) const { return recon_[t]; }
  std::size_t eta_index(int t) const { return eta_[t]; }
  const PromptTable<T>& prompts() const { return prompts_; }

  SensitivityMaps<T> estimate(const KSpaceVolume<T>& k0, const SamplingMask& mask, UnrollTrace<T>* tr = nullptr) const {
    const auto acs = extract_acs(k0, cfg_.acs_lines, mask);
    CVolume<T> base = rss_normalize(acs_coil_images(acs));
    typename SensitivityRefiner<T>::Cache cache;
    CVolume<T> u = refiner_ ? refiner_->forward(params_, base, cache) : base;
    auto sens = make_sensitivities(rss_normalize(u));
    if (tr) {
      tr->sens_base = std::move(base);
      tr->sens_refined = std::move(u);
      tr->refiner_cache = std::move(cache);
    }
    return sens;
  }

  UnrollTrace<T> forward(const KSpaceVolume<T>& k0, const SamplingMask& mask) const {
    require(k0.frames() == cfg_.adjacent, "shape_mismatch",
            "k-space has " + std::to_string(k0.frames()) + " frames, generator expects " +
                std::to_string(cfg_.adjacent));
    check_mask(k0, mask);
    UnrollTrace<T> tr;
    tr.k0 = k0;
    tr.mask = mask;
    tr.sens = estimate(k0, mask, &tr);
    const int A = k0.frames(), C = k0.coils(), H = k0.height(), W = k0.width();
    const std::size_t P = k0.plane();
    tr.k.push_back(k0);
    Tensor4<T> prev_features;
    std::vector<cx> combined(P);
    for (int t = 0; t < cfg_.unrolls; ++t) {
      UnrollStep<T> st;
      const auto& kt = tr.k.back();
      st.coil_images = ifft2c(kt);
      Tensor4<T> x(1, 2 * A + cfg_.prompt_channels, H, W);
      for (int a = 0; a < A; ++a) {
        detail::combine_into<T>(st.coil_images.frame(a), tr.sens, combined);
        complex_to_channels<T>(combined, x, 2 * a);
      }
      if (cfg_.prompt_channels > 0) {
        const auto pr = prompts_.forward(params_, t, H, W);
        std::copy(pr.data.begin(), pr.data.end(), x.ch(0, 2 * A));
      }
      st.features = recon_[t].features(params_, x, st.cache);
      if (cfg_.residual && t > 0) add_into(st.features.data, prev_features.data);
      const auto head = recon_[t].head.forward(params_, st.features);
      st.update = ComplexImage<T>(H, W);
      channels_to_complex<T>(head, 0, 0, st.update.span());
      // Expanded update is identical across adjacent frames: transform once per coil.
      CVolume<T> g_k(1, C, H, W);
      detail::expand_into<T>(st.update.span(), tr.sens, g_k.frame(0));
      for (int c = 0; c < C; ++c) detail::centered_fft2<T>(g_k.slice(0, c), H, W, false);
      tr.k.push_back(dc_step(kt, k0, mask, params_[eta_[t]].data[0], g_k));
      const auto z = global_avg_pool_forward(st.features);
      st.pooled.assign(z.data.begin(), z.data.end());
      prev_features = st.features;
      st.x_in = std::move(x);
      tr.steps.push_back(std::move(st));
    }
    auto fin = MagnitudeCombine<T>::forward(tr.k.back(), tr.central(), tr.sens);
    tr.final_image = std::move(fin.combined);
    return tr;
  }

  // Reverse pass; accumulates into params().grad.
  void backward(const UnrollTrace<T>& tr, const GeneratorGrads<T>& g) {
    const int A = tr.k0.frames(), C = tr.k0.coils(), H = tr.k0.height(), W = tr.k0.width();
    const std::size_t P = tr.k0.plane();
    const int T_ = tr.unrolls();
    const int cf = tr.central();
    KSpaceVolume<T> g_next(A, C, H, W);
    add_central(g_next, g.k_central[T_ - 1], cf);
    CVolume<T> g_sens(1, C, H, W);
    if (g.sens.size() == g_sens.size()) g_sens.vec() = g.sens.vec();
    Tensor4<T> g_carry;
    std::vector<cx> plane(P), acc(P), g_sc(P);

    for (int t = T_ - 1; t >= 0; --t) {
      const auto& st = tr.steps[t];
      const auto& kt = tr.k[t];
      const T eta = params_[eta_[t]].data[0];

      // k(t+1) = k(t) - eta M (k(t) - k0) + G_k
      double g_eta = 0;
      KSpaceVolume<T> g_k(A, C, H, W);
      for (int a = 0; a < A; ++a) {
        const auto* m = tr.mask.frame_data(a);
        for (int c = 0; c < C; ++c) {
          auto gn = g_next.slice(a, c), kv = kt.slice(a, c), k0 = tr.k0.slice(a, c);
          auto dst = g_k.slice(a, c);
          for (std::size_t i = 0; i < P; ++i) {
            if (m[i]) {
              const cx diff = kv[i] - k0[i];
              g_eta -= static_cast<double>(gn[i].real() * diff.real() + gn[i].imag() * diff.imag());
              dst[i] = (T(1) - eta) * gn[i];
            } else {
              dst[i] = gn[i];
            }
          }
        }
      }
      auto& eta_p = params_[eta_[t]];
      eta_p.ensure_grad();
      eta_p.grad[0] += static_cast<T>(g_eta);

      // G_k = fft2c(I_RF * s_c), broadcast over frames.
      std::vector<cx> g_update(P);
      for (int c = 0; c < C; ++c) {
        std::fill(acc.begin(), acc.end(), cx{});
        for (int a = 0; a < A; ++a) {
          auto gn = g_next.slice(a, c);
          for (std::size_t i = 0; i < P; ++i) acc[i] += gn[i];
        }
        detail::centered_fft2<T>(std::span<cx>(acc), H, W, true);
        auto s = tr.sens.s.slice(0, c);
        auto gs = g_sens.slice(0, c);
        for (std::size_t i = 0; i < P; ++i) {
          g_update[i] += std::conj(s[i]) * acc[i];
          gs[i] += std::conj(st.update[i]) * acc[i];
        }
      }
      Tensor4<T> g_head(1, 2, H, W);
      complex_to_channels<T>(g_update, g_head, 0);
      Tensor4<T> g_feat = recon_[t].head.backward(params_, st.features, g_head);
      if (!g.pooled[t].empty()) {
        Tensor4<T> gz(1, static_cast<int>(g.pooled[t].size()), 1, 1);
        for (std::size_t i = 0; i < g.pooled[t].size(); ++i) gz.data[i] = static_cast<T>(g.pooled[t][i]);
        add_into(g_feat.data, global_avg_pool_backward(st.features, gz).data);
      }
      if (cfg_.residual && !g_carry.data.empty()) add_into(g_feat.data, g_carry.data);
      if (cfg_.residual) g_carry = g_feat;

      const Tensor4<T> g_x = recon_[t].features_backward(params_, st.cache, g_feat);
      if (cfg_.prompt_channels > 0)
        prompts_.backward(params_, t, slice_channels(g_x, 2 * A, cfg_.prompt_channels));

      // I_SC[a] = sum_c conj(s_c) I_MC[a,c];  I_MC = ifft2c(k(t))
      for (int a = 0; a < A; ++a) {
        channels_to_complex<T>(g_x, 0, 2 * a, g_sc);
        for (int c = 0; c < C; ++c) {
          auto s = tr.sens.s.slice(0, c);
          auto gs = g_sens.slice(0, c);
          auto img = st.coil_images.slice(a, c);
          for (std::size_t i = 0; i < P; ++i) {
            plane[i] = s[i] * g_sc[i];
            gs[i] += std::conj(g_sc[i]) * img[i];
          }
          detail::centered_fft2<T>(std::span<cx>(plane), H, W, false);
          auto dst = g_k.slice(a, c);
          for (std::size_t i = 0; i < P; ++i) dst[i] += plane[i];
        }
      }
      if (t > 0) add_central(g_k, g.k_central[t - 1], cf);
      g_next = std::move(g_k);
    }

    if (refiner_) {
      const auto g_u = rss_normalize_backward(tr.sens_refined, tr.sens.s, g_sens);
      refiner_->backward(params_, tr.refiner_cache, g_u);
    }
  }

 private:
  static KSpaceVolume<T> dc_step(const KSpaceVolume<T>& kt, const KSpaceVolume<T>& k0, const SamplingMask& m, T eta,
                                 const CVolume<T>& g_k) {
    KSpaceVolume<T> out(kt.frames(), kt.coils(), kt.height(), kt.width());
    for (int a = 0; a < kt.frames(); ++a) {
      const auto* mk = m.frame_data(a);
      for (int c = 0; c < kt.coils(); ++c) {
        auto v = kt.slice(a, c), z = k0.slice(a, c), gk = g_k.slice(0, c);
        auto dst = out.slice(a, c);
        for (std::size_t i = 0; i < dst.size(); ++i)
          dst[i] = mk[i] ? v[i] - eta * (v[i] - z[i]) + gk[i] : v[i] + gk[i];
      }
    }
    return out;
  }

  static void add_central(KSpaceVolume<T>& g, const CVolume<T>& gc, int cf) {
    if (gc.size() == 0) return;
    auto dst = g.frame(cf);
    auto src = gc.frame(0);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  GeneratorConfig cfg_;
  ParamSet<T> params_;
  std::vector<Reconstructor<T>> recon_;
  PromptTable<T> prompts_;
  std::vector<std::size_t> eta_;
  std::optional<SensitivityRefiner<T>> refiner_;
};

// Conditional patch discriminator: (candidate, condition) magnitude images
// through four stride-2 3x3 convolutions to a logit map.
template <class T>
class Discriminator {
 public:
  struct Cache {
    Tensor4<T> x, a1, h1, a2, h2, a3, h3;
  };

  static Discriminator create(Rng& rng, int base = 8, double slope = 0.1) {
    Discriminator d;
    d.slope_ = static_cast<T>(slope);
    d.c1_ = Conv2d<T>::create(d.params_, "disc.c1", 2, base, 3, 2, rng);
    d.c2_ = Conv2d<T>::create(d.params_, "disc.c2", base, 2 * base, 3, 2, rng);
    d.c3_ = Conv2d<T>::create(d.params_, "disc.c3", 2 * base, 2 * base, 3, 2, rng);
    d.c4_ = Conv2d<T>::create(d.params_, "disc.c4", 2 * base, 1, 3, 2, rng);
    return d;
  }

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  Tensor4<T> forward(const RealImage<T>& candidate, const RealImage<T>& condition, Cache& c) const {
    require(candidate.same_shape(condition), "shape_mismatch", "discriminator inputs differ in shape");
    c.x = Tensor4<T>(1, 2, candidate.height(), candidate.width());
    std::copy(candidate.vec().begin(), candidate.vec().end(), c.x.ch(0, 0));
    std::copy(condition.vec().begin(), condition.vec().end(), c.x.ch(0, 1));
    c.a1 = c1_.forward(params_, c.x);
    c.h1 = leaky_relu_forward(c.a1, slope_);
    c.a2 = c2_.forward(params_, c.h1);
    c.h2 = leaky_relu_forward(c.a2, slope_);
    c.a3 = c3_.forward(params_, c.h2);
    c.h3 = leaky_relu_forward(c.a3, slope_);
    return c4_.forward(params_, c.h3);
  }

  // Accumulates parameter gradients; returns dL/d(input) as 1 x 2 x H x W.
  Tensor4<T> backward(const Cache& c, const Tensor4<T>& g_logits, bool want_input_grad = false) {
    auto g = c4_.backward(params_, c.h3, g_logits);
    g = leaky_relu_backward(c.a3, g, slope_);
    g = c3_.backward(params_, c.h2, g);
    g = leaky_relu_backward(c.a2, g, slope_);
    g = c2_.backward(params_, c.h1, g);
    g = leaky_relu_backward(c.a1, g, slope_);
    return c1_.backward(params_, c.x, g, want_input_grad);
  }

  // Input gradient only; parameter gradients are discarded.
  Tensor4<T> input_grad(const Cache& c, const Tensor4<T>& g_logits) const {
    Discriminator scratch = *this;
    scratch.params_.zero_grad();
    return scratch.backward(c, g_logits, true);
  }

 private:
  ParamSet<T> params_;
  Conv2d<T> c1_, c2_, c3_, c4_;
  T slope_ = T(0.1);
};

}  // namespace genre
