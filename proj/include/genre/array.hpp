#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace genre {

template <class T>
struct is_complex : std::false_type {};
template <class R>
struct is_complex<std::complex<R>> : std::true_type {};

inline bool finite_value(double v) { return std::isfinite(v); }
inline bool finite_value(float v) { return std::isfinite(v); }
template <class R>
bool finite_value(const std::complex<R>& v) {
  return std::isfinite(v.real()) && std::isfinite(v.imag());
}

// Dense row-major 2-D array (height x width).
template <class T>
class Array2 {
 public:
  using value_type = T;

  Array2() = default;
  Array2(int h, int w, T fill = T{}) : h_(h), w_(w), data_(checked_size(h, w), fill) {}

  int height() const { return h_; }
  int width() const { return w_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int y, int x) { return data_[static_cast<std::size_t>(y) * w_ + x]; }
  const T& operator()(int y, int x) const { return data_[static_cast<std::size_t>(y) * w_ + x]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  bool same_shape(const Array2& o) const { return h_ == o.h_ && w_ == o.w_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](const T& v) { return finite_value(v); });
  }

  friend bool operator==(const Array2&, const Array2&) = default;

 private:
  static std::size_t checked_size(int h, int w) {
    require(h >= 0 && w >= 0, "invalid_argument", "negative array dimension");
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }

  int h_ = 0;
  int w_ = 0;
  std::vector<T> data_;
};

template <class R>
using ComplexImage = Array2<std::complex<R>>;
template <class R>
using RealImage = Array2<R>;

// Complex 4-D stack: frames x coils x height x width. Used for adjacent
// multi-coil k-space and for multi-coil image stacks (frames = 1).
template <class R>
class CVolume {
 public:
  using cx = std::complex<R>;

  CVolume() = default;
  CVolume(int frames, int coils, int h, int w)
      : frames_(frames), coils_(coils), h_(h), w_(w),
        data_(static_cast<std::size_t>(frames) * coils * h * w) {
    require(frames > 0 && coils > 0 && h > 0 && w > 0, "invalid_argument",
            "volume dimensions must be positive");
  }

  int frames() const { return frames_; }
  int coils() const { return coils_; }
  int height() const { return h_; }
  int width() const { return w_; }
  int central_index() const { return frames_ / 2; }
  std::size_t plane() const { return static_cast<std::size_t>(h_) * w_; }
  std::size_t size() const { return data_.size(); }

  std::span<cx> slice(int f, int c) {
    return {data_.data() + (static_cast<std::size_t>(f) * coils_ + c) * plane(), plane()};
  }
  std::span<const cx> slice(int f, int c) const {
    return {data_.data() + (static_cast<std::size_t>(f) * coils_ + c) * plane(), plane()};
  }
  // All coils of one frame, contiguous.
  std::span<cx> frame(int f) {
    return {data_.data() + static_cast<std::size_t>(f) * coils_ * plane(), coils_ * plane()};
  }
  std::span<const cx> frame(int f) const {
    return {data_.data() + static_cast<std::size_t>(f) * coils_ * plane(), coils_ * plane()};
  }

  cx& at(int f, int c, int y, int x) { return slice(f, c)[static_cast<std::size_t>(y) * w_ + x]; }
  const cx& at(int f, int c, int y, int x) const {
    return slice(f, c)[static_cast<std::size_t>(y) * w_ + x];
  }

  std::vector<cx>& vec() { return data_; }
  const std::vector<cx>& vec() const { return data_; }

  bool same_shape(const CVolume& o) const {
    return frames_ == o.frames_ && coils_ == o.coils_ && h_ == o.h_ && w_ == o.w_;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](const cx& v) { return finite_value(v); });
  }

  // Copy of a single frame as a one-frame volume.
  CVolume single_frame(int f) const {
    CVolume out(1, coils_, h_, w_);
    auto src = frame(f);
    std::copy(src.begin(), src.end(), out.data_.begin());
    return out;
  }

  friend bool operator==(const CVolume&, const CVolume&) = default;

 private:
  int frames_ = 0;
  int coils_ = 0;
  int h_ = 0;
  int w_ = 0;
  std::vector<cx> data_;
};

template <class R>
using KSpaceVolume = CVolume<R>;

inline std::string shape_str(int h, int w) {
  return std::to_string(h) + "x" + std::to_string(w);
}

}  // namespace genre
