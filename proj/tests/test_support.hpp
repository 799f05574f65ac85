#pragma once

#include <complex>
#include <span>
#include <vector>

#include "genre/array.hpp"
#include "genre/rng.hpp"

namespace genre_test {

inline std::span<double> as_doubles(std::vector<std::complex<double>>& v) {
  return {reinterpret_cast<double*>(v.data()), 2 * v.size()};
}
inline std::span<const double> as_doubles(const std::vector<std::complex<double>>& v) {
  return {reinterpret_cast<const double*>(v.data()), 2 * v.size()};
}

inline genre::CVolume<double> random_volume(int f, int c, int h, int w, genre::Rng& rng, double scale = 1.0) {
  genre::CVolume<double> v(f, c, h, w);
  for (auto& z : v.vec()) z = {rng.normal(0, scale), rng.normal(0, scale)};
  return v;
}

inline genre::RealImage<double> random_real(int h, int w, genre::Rng& rng, double lo = 0.0, double hi = 1.0) {
  genre::RealImage<double> img(h, w);
  for (auto& v : img.vec()) v = rng.uniform(lo, hi);
  return img;
}

// Sum of Re(conj(a) b) over all entries.
inline double real_inner(std::span<const std::complex<double>> a, std::span<const std::complex<double>> b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i].real() * b[i].real() + a[i].imag() * b[i].imag();
  return acc;
}

}  // namespace genre_test
