#pragma once

#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include "array.hpp"
#include "error.hpp"
#include "fft.hpp"
#include "sampling.hpp"

namespace genre {

// Coil maps s_c and their conjugates (the maps used for combination).
template <class R>
struct SensitivityMaps {
  CVolume<R> s;       // 1 x coils x h x w
  CVolume<R> s_conj;  // conj(s)

  int coils() const { return s.coils(); }
  int height() const { return s.height(); }
  int width() const { return s.width(); }
};

inline constexpr double kRssFloor = 1e-8;

// Central n_lines phase-encode rows of every frame/coil, zero elsewhere.
// Without a mask, a band row that is exactly zero in every coil of the
// central frame is taken as unsampled.
template <class R>
KSpaceVolume<R> extract_acs(const KSpaceVolume<R>& k, int n_lines) {
  require(n_lines >= 1 && n_lines <= k.height(), "invalid_argument", "acs lines out of range");
  const int first = acs_first_line(k.height(), n_lines);
  const int cf = k.central_index();
  for (int y = first; y < first + n_lines; ++y) {
    bool any = false;
    for (int c = 0; c < k.coils() && !any; ++c)
      for (int x = 0; x < k.width() && !any; ++x) any = k.at(cf, c, y, x) != std::complex<R>{};
    require(any, "acs_not_sampled", "ACS row " + std::to_string(y) + " is not sampled");
  }
  KSpaceVolume<R> out(k.frames(), k.coils(), k.height(), k.width());
  for (int f = 0; f < k.frames(); ++f)
    for (int c = 0; c < k.coils(); ++c) {
      auto src = k.slice(f, c);
      auto dst = out.slice(f, c);
      const std::size_t lo = static_cast<std::size_t>(first) * k.width();
      const std::size_t hi = static_cast<std::size_t>(first + n_lines) * k.width();
      std::copy(src.begin() + lo, src.begin() + hi, dst.begin() + lo);
    }
  return out;
}

template <class R>
KSpaceVolume<R> extract_acs(const KSpaceVolume<R>& k, int n_lines, const SamplingMask& m) {
  require(m.height == k.height() && m.width == k.width() && m.frames == k.frames(), "shape_mismatch",
          "mask does not match k-space");
  const int first = acs_first_line(k.height(), n_lines);
  for (int f = 0; f < m.frames; ++f)
    for (int y = first; y < first + n_lines; ++y)
      for (int x = 0; x < m.width; ++x)
        require(m.at(f, y, x) != 0, "acs_not_sampled", "ACS band not fully sampled by mask");
  return extract_acs(k, n_lines);
}

// s_c = u_c / max(RSS(u), floor) pixelwise.
template <class R>
CVolume<R> rss_normalize(const CVolume<R>& u) {
  CVolume<R> s = u;
  const std::size_t P = u.plane();
  for (std::size_t i = 0; i < P; ++i) {
    double ss = 0;
    for (int c = 0; c < u.coils(); ++c) ss += std::norm(u.slice(0, c)[i]);
    const R n = static_cast<R>(std::max(std::sqrt(ss), kRssFloor));
    for (int c = 0; c < u.coils(); ++c) s.slice(0, c)[i] /= n;
  }
  return s;
}

// Gradient of rss_normalize: g_u = (g_s - Re(sum conj(g_s) s) s) / n where
// the floor is inactive, g_s / floor where it is.
template <class R>
CVolume<R> rss_normalize_backward(const CVolume<R>& u, const CVolume<R>& s, const CVolume<R>& g_s) {
  CVolume<R> g_u = g_s;
  const std::size_t P = u.plane();
  for (std::size_t i = 0; i < P; ++i) {
    double ss = 0;
    for (int c = 0; c < u.coils(); ++c) ss += std::norm(u.slice(0, c)[i]);
    const double n = std::sqrt(ss);
    if (n <= kRssFloor) {
      for (int c = 0; c < u.coils(); ++c) g_u.slice(0, c)[i] = g_s.slice(0, c)[i] / static_cast<R>(kRssFloor);
      continue;
    }
    double alpha = 0;
    for (int c = 0; c < u.coils(); ++c) {
      const auto gs = g_s.slice(0, c)[i], sv = s.slice(0, c)[i];
      alpha += gs.real() * sv.real() + gs.imag() * sv.imag();
    }
    for (int c = 0; c < u.coils(); ++c)
      g_u.slice(0, c)[i] =
          (g_s.slice(0, c)[i] - static_cast<R>(alpha) * s.slice(0, c)[i]) / static_cast<R>(n);
  }
  return g_u;
}

template <class R>
SensitivityMaps<R> make_sensitivities(CVolume<R> s) {
  SensitivityMaps<R> maps{std::move(s), {}};
  maps.s_conj = maps.s;
  for (auto& z : maps.s_conj.vec()) z = std::conj(z);
  return maps;
}

// Raw coil images of the central ACS frame (ifft2c per coil).
template <class R>
CVolume<R> acs_coil_images(const KSpaceVolume<R>& acs) {
  bool nonzero = false;
  for (const auto& z : acs.frame(acs.central_index()))
    if (z != std::complex<R>{}) {
      nonzero = true;
      break;
    }
  require(nonzero, "invalid_argument", "all-zero ACS: cannot estimate sensitivities");
  CVolume<R> raw = acs.single_frame(acs.central_index());
  for (int c = 0; c < raw.coils(); ++c)
    detail::centered_fft2<R>(raw.slice(0, c), raw.height(), raw.width(), true);
  return raw;
}

// Low-resolution ACS estimate normalized by RSS.
template <class R>
SensitivityMaps<R> estimate_sensitivities(const KSpaceVolume<R>& acs) {
  return make_sensitivities(rss_normalize(acs_coil_images(acs)));
}

// Same, with a refiner applied to the base maps and re-normalized.
// `refine` maps a 1 x coils x h x w volume to one of the same shape.
template <class R, class Refine>
SensitivityMaps<R> estimate_sensitivities(const KSpaceVolume<R>& acs, Refine&& refine) {
  const CVolume<R> base = rss_normalize(acs_coil_images(acs));
  CVolume<R> refined = refine(base);
  require(refined.same_shape(base), "shape_mismatch", "sensitivity refiner changed shape");
  return make_sensitivities(rss_normalize(refined));
}

namespace detail {

template <class R>
void combine_into(std::span<const std::complex<R>> coils, const SensitivityMaps<R>& sens,
                  std::span<std::complex<R>> out) {
  const std::size_t P = out.size();
  std::fill(out.begin(), out.end(), std::complex<R>{});
  for (int c = 0; c < sens.coils(); ++c) {
    auto sc = sens.s_conj.slice(0, c);
    const auto* x = coils.data() + c * P;
    for (std::size_t i = 0; i < P; ++i) out[i] += sc[i] * x[i];
  }
}

template <class R>
void expand_into(std::span<const std::complex<R>> img, const SensitivityMaps<R>& sens,
                 std::span<std::complex<R>> out) {
  const std::size_t P = img.size();
  for (int c = 0; c < sens.coils(); ++c) {
    auto s = sens.s.slice(0, c);
    auto* y = out.data() + c * P;
    for (std::size_t i = 0; i < P; ++i) y[i] = s[i] * img[i];
  }
}

template <class R>
void check_sens(const CVolume<R>& v, const SensitivityMaps<R>& sens) {
  require(v.coils() == sens.coils() && v.height() == sens.height() && v.width() == sens.width(),
          "shape_mismatch", "coil stack does not match sensitivity maps");
}

}  // namespace detail

// sum_c conj(s_c) * img_c for the first frame of a coil stack.
template <class R>
ComplexImage<R> coil_combine(const CVolume<R>& img_mc, const SensitivityMaps<R>& sens, int frame = 0) {
  detail::check_sens(img_mc, sens);
  ComplexImage<R> out(img_mc.height(), img_mc.width());
  detail::combine_into<R>(img_mc.frame(frame), sens, out.span());
  return out;
}

// s_c * img broadcast over `frames` frames.
template <class R>
CVolume<R> coil_expand(const ComplexImage<R>& img, const SensitivityMaps<R>& sens, int frames = 1) {
  require(img.height() == sens.height() && img.width() == sens.width(), "shape_mismatch",
          "image does not match sensitivity maps");
  CVolume<R> out(frames, sens.coils(), img.height(), img.width());
  for (int f = 0; f < frames; ++f) detail::expand_into<R>(img.span(), sens, out.frame(f));
  return out;
}

template <class R>
void check_mask(const KSpaceVolume<R>& k, const SamplingMask& m) {
  require(m.frames == k.frames() && m.height == k.height() && m.width == k.width(), "shape_mismatch",
          "mask does not match k-space volume");
}

// k_t - eta * M (.) (k_t - k_0) + g_k
template <class R>
KSpaceVolume<R> data_consistency(const KSpaceVolume<R>& k_t, const KSpaceVolume<R>& k_0, const SamplingMask& m,
                                 R eta, const KSpaceVolume<R>& g_k) {
  require(k_t.same_shape(k_0) && k_t.same_shape(g_k), "shape_mismatch", "data_consistency shape mismatch");
  check_mask(k_t, m);
  require(std::isfinite(static_cast<double>(eta)), "non_finite", "eta must be finite");
  KSpaceVolume<R> out(k_t.frames(), k_t.coils(), k_t.height(), k_t.width());
  for (int f = 0; f < k_t.frames(); ++f) {
    const auto* mk = m.frame_data(f);
    for (int c = 0; c < k_t.coils(); ++c) {
      auto kt = k_t.slice(f, c), k0 = k_0.slice(f, c), gk = g_k.slice(f, c);
      auto dst = out.slice(f, c);
      for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] = mk[i] ? kt[i] - eta * (kt[i] - k0[i]) + gk[i] : kt[i] + gk[i];
    }
  }
  return out;
}

// A(x) = M (.) fft2c(coil_expand(x)) over every mask frame.
template <class R>
KSpaceVolume<R> forward_operator(const ComplexImage<R>& x, const SensitivityMaps<R>& sens, const SamplingMask& m) {
  KSpaceVolume<R> k = fft2c(coil_expand(x, sens, m.frames));
  return apply_mask_inplace(std::move(k), m);
}

template <class R>
KSpaceVolume<R> apply_mask_inplace(KSpaceVolume<R> k, const SamplingMask& m) {
  check_mask(k, m);
  for (int f = 0; f < k.frames(); ++f) {
    const auto* mk = m.frame_data(f);
    for (int c = 0; c < k.coils(); ++c) {
      auto s = k.slice(f, c);
      for (std::size_t i = 0; i < s.size(); ++i)
        if (!mk[i]) s[i] = {};
    }
  }
  return k;
}

// A^H(y) = sum over frames of coil_combine(ifft2c(M (.) y)).
template <class R>
ComplexImage<R> adjoint_operator(const KSpaceVolume<R>& y, const SensitivityMaps<R>& sens, const SamplingMask& m) {
  const KSpaceVolume<R> img = ifft2c(apply_mask_inplace(y, m));
  ComplexImage<R> out(y.height(), y.width());
  ComplexImage<R> tmp(y.height(), y.width());
  for (int f = 0; f < y.frames(); ++f) {
    detail::combine_into<R>(img.frame(f), sens, tmp.span());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += tmp[i];
  }
  return out;
}

// |coil_combine(ifft2c(k_frame))| and its reverse pass. Used for every
// image-domain loss on the central frame.
template <class R>
struct MagnitudeCombine {
  CVolume<R> coil_images;     // 1 x coils: ifft2c of the k-space frame
  ComplexImage<R> combined;   // sum conj(s) * coil_images
  RealImage<R> magnitude;

  static MagnitudeCombine forward(const KSpaceVolume<R>& k, int frame, const SensitivityMaps<R>& sens) {
    MagnitudeCombine mc;
    mc.coil_images = k.single_frame(frame);
    for (int c = 0; c < k.coils(); ++c)
      detail::centered_fft2<R>(mc.coil_images.slice(0, c), k.height(), k.width(), true);
    mc.combined = ComplexImage<R>(k.height(), k.width());
    detail::combine_into<R>(mc.coil_images.frame(0), sens, mc.combined.span());
    mc.magnitude = RealImage<R>(k.height(), k.width());
    for (std::size_t i = 0; i < mc.combined.size(); ++i) mc.magnitude[i] = std::abs(mc.combined[i]);
    return mc;
  }

  // Given dL/d|y|, accumulate dL/dk (1 x coils) and optionally dL/ds.
  void backward(const RealImage<R>& g_mag, const SensitivityMaps<R>& sens, std::span<std::complex<R>> g_k,
                CVolume<R>* g_sens) const {
    const std::size_t P = combined.size();
    std::vector<std::complex<R>> g_y(P);
    for (std::size_t i = 0; i < P; ++i) {
      const R m = magnitude[i];
      g_y[i] = m > R(0) ? g_mag[i] * combined[i] / m : std::complex<R>{};
    }
    std::vector<std::complex<R>> plane(P);
    for (int c = 0; c < sens.coils(); ++c) {
      auto s = sens.s.slice(0, c);
      for (std::size_t i = 0; i < P; ++i) plane[i] = s[i] * g_y[i];
      detail::centered_fft2<R>(std::span<std::complex<R>>(plane), combined.height(), combined.width(), false);
      auto dst = g_k.subspan(c * P, P);
      for (std::size_t i = 0; i < P; ++i) dst[i] += plane[i];
      if (g_sens) {
        auto gs = g_sens->slice(0, c);
        auto x = coil_images.slice(0, c);
        for (std::size_t i = 0; i < P; ++i) gs[i] += std::conj(g_y[i]) * x[i];
      }
    }
  }
};

}  // namespace genre
