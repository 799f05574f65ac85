#pragma once

#include <cmath>
#include <complex>
#include <numeric>
#include <span>

#include "array.hpp"
#include "error.hpp"
#include "fft.hpp"
#include "rng.hpp"

namespace genre {

// Same-size 2-D convolution with zero padding. The kernel is flipped
// (true convolution), so a Sobel kernel gives the textbook sign.
template <class R>
RealImage<R> conv2d_same(const RealImage<R>& img, const RealImage<R>& kernel) {
  const int kh = kernel.height(), kw = kernel.width();
  require(kh % 2 == 1 && kw % 2 == 1, "invalid_argument", "conv2d_same needs odd kernel sides");
  const int h = img.height(), w = img.width();
  const int ry = kh / 2, rx = kw / 2;
  RealImage<R> out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      R acc = 0;
      for (int i = 0; i < kh; ++i) {
        const int sy = y + ry - i;
        if (sy < 0 || sy >= h) continue;
        for (int j = 0; j < kw; ++j) {
          const int sx = x + rx - j;
          if (sx < 0 || sx >= w) continue;
          acc += kernel(i, j) * img(sy, sx);
        }
      }
      out(y, x) = acc;
    }
  return out;
}

template <class R>
RealImage<R> sobel_x() {
  RealImage<R> k(3, 3);
  const R v[9] = {1, 0, -1, 2, 0, -2, 1, 0, -1};
  std::copy(v, v + 9, k.data());
  return k;
}

template <class R>
RealImage<R> sobel_y() {
  RealImage<R> k(3, 3);
  const R v[9] = {1, 2, 1, 0, 0, 0, -1, -2, -1};
  std::copy(v, v + 9, k.data());
  return k;
}

template <class R>
RealImage<R> box_kernel(int side) {
  return RealImage<R>(side, side, static_cast<R>(1.0 / (side * side)));
}

// <a, b> = sum conj(a) * b
template <class R>
std::complex<double> inner(std::span<const std::complex<R>> a, std::span<const std::complex<R>> b) {
  require(a.size() == b.size(), "shape_mismatch", "inner product of unequal lengths");
  std::complex<double> acc{};
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += std::conj(std::complex<double>(a[i])) * std::complex<double>(b[i]);
  return acc;
}

template <class T>
double norm2(std::span<const T> a) {
  double acc = 0;
  for (const auto& v : a) acc += std::norm(v);
  return std::sqrt(acc);
}

template <class R>
RealImage<R> magnitude(const ComplexImage<R>& img) {
  RealImage<R> out(img.height(), img.width());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = std::abs(img[i]);
  return out;
}

template <class R>
ComplexImage<R> random_complex_image(int h, int w, Rng& rng) {
  ComplexImage<R> out(h, w);
  for (auto& v : out.vec()) v = {static_cast<R>(rng.normal()), static_cast<R>(rng.normal())};
  return out;
}

}  // namespace genre
