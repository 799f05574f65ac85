#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <numbers>
#include <span>
#include <unordered_map>
#include <vector>

#include "array.hpp"
#include "error.hpp"

namespace genre {
namespace detail {

// Unnormalized 1-D DFT of a fixed length. Radix-2 for powers of two,
// direct summation otherwise.
template <class R>
class FftPlan {
 public:
  using cx = std::complex<R>;

  explicit FftPlan(std::size_t n) : n_(n), pow2_(n > 0 && (n & (n - 1)) == 0), tw_(n) {
    for (std::size_t k = 0; k < n; ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      tw_[k] = cx(static_cast<R>(std::cos(a)), static_cast<R>(std::sin(a)));
    }
    if (pow2_) {
      rev_.resize(n);
      std::size_t bits = 0;
      while ((std::size_t{1} << bits) < n) ++bits;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = 0;
        for (std::size_t b = 0; b < bits; ++b)
          if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
        rev_[i] = r;
      }
    } else {
      scratch_.resize(n);
    }
  }

  void run(cx* x, bool inverse) {
    if (pow2_)
      radix2(x, inverse);
    else
      direct(x, inverse);
  }

 private:
  void radix2(cx* x, bool inverse) const {
    for (std::size_t i = 0; i < n_; ++i)
      if (i < rev_[i]) std::swap(x[i], x[rev_[i]]);
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t j = 0; j < half; ++j) {
          cx w = tw_[j * step];
          if (inverse) w = std::conj(w);
          const cx u = x[start + j];
          const cx v = x[start + j + half] * w;
          x[start + j] = u + v;
          x[start + j + half] = u - v;
        }
      }
    }
  }

  void direct(cx* x, bool inverse) {
    for (std::size_t k = 0; k < n_; ++k) {
      cx acc{};
      for (std::size_t j = 0; j < n_; ++j) {
        cx w = tw_[(j * k) % n_];
        if (inverse) w = std::conj(w);
        acc += x[j] * w;
      }
      scratch_[k] = acc;
    }
    std::copy(scratch_.begin(), scratch_.end(), x);
  }

  std::size_t n_;
  bool pow2_;
  std::vector<cx> tw_;
  std::vector<std::size_t> rev_;
  std::vector<cx> scratch_;
};

template <class R>
FftPlan<R>& plan_for(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::unique_ptr<FftPlan<R>>> cache;
  auto& p = cache[n];
  if (!p) p = std::make_unique<FftPlan<R>>(n);
  return *p;
}

// Centered orthonormal 2-D transform of an h x w plane, in place.
// Implemented as ifftshift -> DFT -> fftshift.
template <class R>
void centered_fft2(std::span<std::complex<R>> plane, int h, int w, bool inverse) {
  using cx = std::complex<R>;
  thread_local std::vector<cx> tmp;
  thread_local std::vector<cx> col;
  const std::size_t H = h, W = w;
  tmp.resize(H * W);
  for (std::size_t y = 0; y < H; ++y) {
    const std::size_t sy = (y + H / 2) % H;
    for (std::size_t x = 0; x < W; ++x) tmp[y * W + x] = plane[sy * W + (x + W / 2) % W];
  }
  auto& prow = plan_for<R>(W);
  for (std::size_t y = 0; y < H; ++y) prow.run(tmp.data() + y * W, inverse);
  auto& pcol = plan_for<R>(H);
  col.resize(H);
  for (std::size_t x = 0; x < W; ++x) {
    for (std::size_t y = 0; y < H; ++y) col[y] = tmp[y * W + x];
    pcol.run(col.data(), inverse);
    for (std::size_t y = 0; y < H; ++y) tmp[y * W + x] = col[y];
  }
  const R scale = static_cast<R>(1.0 / std::sqrt(static_cast<double>(H * W)));
  for (std::size_t y = 0; y < H; ++y) {
    const std::size_t sy = (y + H - H / 2) % H;
    for (std::size_t x = 0; x < W; ++x)
      plane[y * W + x] = tmp[sy * W + (x + W - W / 2) % W] * scale;
  }
}

template <class R>
void check_fft_input(std::span<const std::complex<R>> plane, int h, int w) {
  require(h >= 2 && w >= 2, "invalid_argument", "fft2c needs height, width >= 2");
  for (const auto& v : plane)
    require(finite_value(v), "non_finite", "fft2c input contains NaN/Inf");
}

}  // namespace detail

// Centered (DC at grid center), unitary 2-D Fourier transform.
template <class R>
ComplexImage<R> fft2c(const ComplexImage<R>& img) {
  detail::check_fft_input<R>(img.span(), img.height(), img.width());
  ComplexImage<R> out = img;
  detail::centered_fft2<R>(out.span(), out.height(), out.width(), false);
  return out;
}

template <class R>
ComplexImage<R> ifft2c(const ComplexImage<R>& k) {
  detail::check_fft_input<R>(k.span(), k.height(), k.width());
  ComplexImage<R> out = k;
  detail::centered_fft2<R>(out.span(), out.height(), out.width(), true);
  return out;
}

// Per-plane transforms over every (frame, coil) slice of a volume.
template <class R>
CVolume<R> fft2c(const CVolume<R>& v) {
  CVolume<R> out = v;
  for (int f = 0; f < v.frames(); ++f)
    for (int c = 0; c < v.coils(); ++c) {
      detail::check_fft_input<R>(v.slice(f, c), v.height(), v.width());
      detail::centered_fft2<R>(out.slice(f, c), v.height(), v.width(), false);
    }
  return out;
}

template <class R>
CVolume<R> ifft2c(const CVolume<R>& v) {
  CVolume<R> out = v;
  for (int f = 0; f < v.frames(); ++f)
    for (int c = 0; c < v.coils(); ++c) {
      detail::check_fft_input<R>(v.slice(f, c), v.height(), v.width());
      detail::centered_fft2<R>(out.slice(f, c), v.height(), v.width(), true);
    }
  return out;
}

}  // namespace genre
