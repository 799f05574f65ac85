#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

#include "array.hpp"
#include "error.hpp"
#include "fft.hpp"
#include "rng.hpp"
#include "sampling.hpp"

namespace genre {

// Simulated acquisition domain. These are stand-ins for scanner/protocol
// variability: contrast exponent, complex noise sigma, bias-field slope
// and Gaussian blur width (pixels).
struct DomainParams {
  double contrast_gamma;
  double noise_sigma;
  double bias_strength;
  double blur_sigma;
};

inline constexpr int kTrainingDomains = 5;
inline constexpr int kUnseenDomain = 5;

inline constexpr std::array<DomainParams, 6> kDomainTable{{
    {1.00, 0.004, 0.00, 0.0},
    {0.80, 0.008, 0.20, 0.5},
    {1.20, 0.006, 0.10, 1.0},
    {0.90, 0.012, 0.30, 0.0},
    {1.10, 0.010, 0.15, 0.7},
    {1.40, 0.016, 0.25, 0.8},  // held out
}};

inline const DomainParams& domain_params(int domain_id) {
  require(domain_id >= 0 && domain_id < static_cast<int>(kDomainTable.size()), "invalid_argument",
          "domain_id " + std::to_string(domain_id) + " not in table");
  return kDomainTable[domain_id];
}

struct PhantomSequence {
  std::vector<ComplexImage<double>> frames;
  int domain_id = 0;
  std::uint64_t seed = 0;
};

// coils x height x width, stored as a one-frame volume.
struct CoilProfileSet {
  CVolume<double> maps;
};

namespace detail {

struct Ellipse {
  double cx, cy, ax, ay, value;
  bool contains(double u, double v) const {
    const double du = (u - cx) / ax, dv = (v - cy) / ay;
    return du * du + dv * dv <= 1.0;
  }
};

inline std::vector<double> gaussian_taps(double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> t(2 * r + 1);
  double s = 0;
  for (int i = -r; i <= r; ++i) s += t[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : t) v /= s;
  return t;
}

// Separable Gaussian blur with clamped borders.
inline RealImage<double> blur(const RealImage<double>& img, double sigma) {
  if (sigma <= 0) return img;
  const auto taps = gaussian_taps(sigma);
  const int r = static_cast<int>(taps.size()) / 2;
  const int h = img.height(), w = img.width();
  RealImage<double> tmp(h, w), out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += taps[i + r] * img(y, std::clamp(x + i, 0, w - 1));
      tmp(y, x) = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += taps[i + r] * tmp(std::clamp(y + i, 0, h - 1), x);
      out(y, x) = acc;
    }
  return out;
}

}  // namespace detail

// Layered-ellipse torso with a periodically contracting ventricle.
inline PhantomSequence make_dynamic_phantom(int h, int w, int frames, int domain_id, Rng& rng) {
  require(h >= 32 && w >= 32, "invalid_argument", "phantom needs h, w >= 32");
  require(frames >= 5, "invalid_argument", "phantom needs at least 5 frames");
  const DomainParams& dp = domain_params(domain_id);

  PhantomSequence seq;
  seq.domain_id = domain_id;
  seq.seed = rng.key() ^ rng.counter();

  const double jx = rng.uniform(-0.05, 0.05), jy = rng.uniform(-0.05, 0.05);
  const double torso_ax = rng.uniform(0.80, 0.90), torso_ay = rng.uniform(0.65, 0.75);
  const double lv_x = 0.10 + rng.uniform(-0.05, 0.05), lv_y = -0.05 + rng.uniform(-0.05, 0.05);
  const double lv_r = rng.uniform(0.17, 0.23);
  const double myo = rng.uniform(0.07, 0.09);
  const double phase0 = rng.uniform(0, 2 * std::numbers::pi);
  const double squeeze = rng.uniform(0.15, 0.25);
  const double vessel_r = rng.uniform(0.05, 0.07);
  const double bias_dir = rng.uniform(0, 2 * std::numbers::pi);
  std::array<double, 4> phase_poly{};
  for (auto& a : phase_poly) a = rng.uniform(-0.8, 0.8);

  for (int f = 0; f < frames; ++f) {
    const double beat = std::sin(2 * std::numbers::pi * f / frames + phase0);
    const double r = lv_r * (1.0 + squeeze * beat);
    const std::vector<detail::Ellipse> layers = {
        {jx, jy, torso_ax, torso_ay, 0.35},
        {jx - 0.45, jy - 0.10, 0.25, 0.40, 0.05},
        {jx + 0.45, jy - 0.10, 0.22, 0.38, 0.05},
        {jx - 0.35, jy + 0.45, 0.35, 0.20, 0.50},
        {jx + lv_x, jy + lv_y, r + myo, (r + myo) * 0.95, 0.45},
        {jx + lv_x - 0.25, jy + lv_y + 0.05, 0.7 * r + 0.05, 0.9 * r + 0.05, 0.85},
        {jx + lv_x, jy + lv_y, r, r * 0.95, 1.00},
        {jx + 0.25, jy - 0.38, vessel_r, vessel_r, 0.95},
    };
    RealImage<double> base(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double u = (x - w / 2.0) / (w / 2.0), v = (y - h / 2.0) / (h / 2.0);
        double val = 0;
        for (const auto& e : layers)
          if (e.contains(u, v)) val = e.value;
        const double bias = 1.0 + dp.bias_strength * (u * std::cos(bias_dir) + v * std::sin(bias_dir));
        base(y, x) = std::pow(val, dp.contrast_gamma) * std::max(bias, 0.05);
      }
    base = detail::blur(base, dp.blur_sigma);

    ComplexImage<double> img(h, w);
    double peak = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double u = (x - w / 2.0) / (w / 2.0), v = (y - h / 2.0) / (h / 2.0);
        const double ph = phase_poly[0] + phase_poly[1] * u + phase_poly[2] * v + phase_poly[3] * u * v;
        std::complex<double> z = std::polar(base(y, x), ph);
        z += std::complex<double>(rng.normal(0, dp.noise_sigma), rng.normal(0, dp.noise_sigma));
        img(y, x) = z;
        peak = std::max(peak, std::abs(z));
      }
    for (auto& z : img.vec()) z /= peak;
    seq.frames.push_back(std::move(img));
  }
  return seq;
}

// Gaussian-magnitude coil profiles centered outside the FOV with a
// low-order polynomial phase, scaled so max pixelwise RSS is 1.
inline CoilProfileSet make_coil_profiles(int h, int w, int ncoils, Rng& rng) {
  require(ncoils >= 2, "invalid_argument", "need at least 2 coils");
  CoilProfileSet set{CVolume<double>(1, ncoils, h, w)};
  for (int c = 0; c < ncoils; ++c) {
    const double ang = 2 * std::numbers::pi * c / ncoils + rng.uniform(-0.2, 0.2);
    const double pcx = 1.1 * std::cos(ang), pcy = 1.1 * std::sin(ang);
    const double width = 0.9 * rng.uniform(0.9, 1.1);
    const double p0 = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const double p1 = rng.uniform(-0.5, 0.5), p2 = rng.uniform(-0.5, 0.5);
    auto plane = set.maps.slice(0, c);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double u = (x - w / 2.0) / (w / 2.0), v = (y - h / 2.0) / (h / 2.0);
        const double d2 = (u - pcx) * (u - pcx) + (v - pcy) * (v - pcy);
        const double mag = std::max(std::exp(-d2 / (2 * width * width)), 1e-3);
        plane[y * w + x] = std::polar(mag, p0 + p1 * u + p2 * v);
      }
  }
  double peak = 0;
  for (std::size_t i = 0; i < set.maps.plane(); ++i) {
    double ss = 0;
    for (int c = 0; c < ncoils; ++c) ss += std::norm(set.maps.slice(0, c)[i]);
    peak = std::max(peak, std::sqrt(ss));
  }
  for (auto& z : set.maps.vec()) z /= peak;
  return set;
}

struct MultiCoilSequence {
  CVolume<double> images;  // frames x coils x h x w
  CoilProfileSet profiles;
};

inline MultiCoilSequence simulate_coils(const PhantomSequence& seq, int ncoils, Rng& rng) {
  require(ncoils >= 2, "invalid_argument", "simulate_coils needs ncoils >= 2");
  require(!seq.frames.empty(), "invalid_argument", "empty phantom sequence");
  const int h = seq.frames[0].height(), w = seq.frames[0].width();
  MultiCoilSequence out{CVolume<double>(static_cast<int>(seq.frames.size()), ncoils, h, w),
                        make_coil_profiles(h, w, ncoils, rng)};
  for (int f = 0; f < out.images.frames(); ++f)
    for (int c = 0; c < ncoils; ++c) {
      auto dst = out.images.slice(f, c);
      auto prof = out.profiles.maps.slice(0, c);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = seq.frames[f][i] * prof[i];
    }
  return out;
}

// Source frames feeding central frame `center`, clamp-replicated at the ends.
inline std::vector<int> adjacent_frames(int center, int adjacent, int frames) {
  std::vector<int> ids(adjacent);
  for (int a = 0; a < adjacent; ++a) ids[a] = std::clamp(center - adjacent / 2 + a, 0, frames - 1);
  return ids;
}

struct KSpaceSample {
  KSpaceVolume<double> k0;
  KSpaceVolume<double> kG;
  int center = 0;
  std::vector<int> frame_ids;
};

inline KSpaceVolume<double> stack_kspace(const CVolume<double>& images, const std::vector<int>& ids) {
  KSpaceVolume<double> k(static_cast<int>(ids.size()), images.coils(), images.height(), images.width());
  for (int a = 0; a < k.frames(); ++a)
    for (int c = 0; c < k.coils(); ++c) {
      auto src = images.slice(ids[a], c);
      std::copy(src.begin(), src.end(), k.slice(a, c).begin());
      detail::centered_fft2<double>(k.slice(a, c), k.height(), k.width(), false);
    }
  return k;
}

// Masked copy: k0 = M (.) kG frame by frame. `mask` has one frame per
// k-space frame.
template <class R>
KSpaceVolume<R> apply_mask(const KSpaceVolume<R>& kG, const SamplingMask& mask) {
  require(mask.frames == kG.frames() && mask.height == kG.height() && mask.width == kG.width(),
          "shape_mismatch", "mask does not match k-space volume");
  KSpaceVolume<R> k0 = kG;
  for (int a = 0; a < kG.frames(); ++a) {
    const auto* m = mask.frame_data(a);
    for (int c = 0; c < kG.coils(); ++c) {
      auto s = k0.slice(a, c);
      for (std::size_t i = 0; i < s.size(); ++i)
        if (!m[i]) s[i] = {};
    }
  }
  return k0;
}

// One sample per central frame: `adjacent` neighbouring fully sampled
// k-spaces (kG) and their masked versions (k0).
inline std::vector<KSpaceSample> to_kspace_dataset(const CVolume<double>& images, const SamplingMask& mask,
                                                   int adjacent) {
  require(adjacent >= 1 && adjacent % 2 == 1, "invalid_argument", "adjacent must be odd");
  require(adjacent <= images.frames(), "invalid_argument", "adjacent exceeds frame count");
  require(mask.frames == images.frames() && mask.height == images.height() && mask.width == images.width(),
          "shape_mismatch", "mask does not match image sequence");
  std::vector<KSpaceSample> out;
  for (int center = 0; center < images.frames(); ++center) {
    KSpaceSample s;
    s.center = center;
    s.frame_ids = adjacent_frames(center, adjacent, images.frames());
    s.kG = stack_kspace(images, s.frame_ids);
    s.k0 = apply_mask(s.kG, mask.window(s.frame_ids));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace genre
