#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace genre {

enum class Trajectory : std::uint8_t { Uniform = 0, Gaussian = 1, Radial = 2 };

inline std::string to_string(Trajectory t) {
  switch (t) {
    case Trajectory::Uniform: return "uniform";
    case Trajectory::Gaussian: return "gaussian";
    case Trajectory::Radial: return "radial";
  }
  return "?";
}

inline Trajectory parse_trajectory(const std::string& s) {
  if (s == "uniform") return Trajectory::Uniform;
  if (s == "gaussian") return Trajectory::Gaussian;
  if (s == "radial") return Trajectory::Radial;
  throw Error("invalid_argument", "unknown trajectory '" + s + "'");
}

// Binary k-t mask, frames x height x width. Rows are phase-encode lines,
// columns the fully sampled readout.
struct SamplingMask {
  int frames = 0;
  int height = 0;
  int width = 0;
  int acs_lines = 0;
  int accel = 1;
  Trajectory trajectory = Trajectory::Uniform;
  std::vector<std::uint8_t> mask;

  std::uint8_t& at(int f, int y, int x) {
    return mask[(static_cast<std::size_t>(f) * height + y) * width + x];
  }
  std::uint8_t at(int f, int y, int x) const {
    return mask[(static_cast<std::size_t>(f) * height + y) * width + x];
  }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  const std::uint8_t* frame_data(int f) const { return mask.data() + f * plane(); }

  std::size_t sampled() const {
    std::size_t n = 0;
    for (auto v : mask) n += v;
    return n;
  }

  // Number of fully sampled rows in frame f.
  int sampled_lines(int f) const {
    int n = 0;
    for (int y = 0; y < height; ++y) {
      bool full = true;
      for (int x = 0; x < width && full; ++x) full = at(f, y, x) != 0;
      n += full;
    }
    return n;
  }

  // Sub-mask made of the listed frames, in order.
  SamplingMask window(const std::vector<int>& frame_ids) const {
    SamplingMask out = *this;
    out.frames = static_cast<int>(frame_ids.size());
    out.mask.assign(out.frames * plane(), 0);
    for (int i = 0; i < out.frames; ++i) {
      require(frame_ids[i] >= 0 && frame_ids[i] < frames, "invalid_argument", "mask frame out of range");
      std::copy_n(frame_data(frame_ids[i]), plane(), out.mask.data() + i * plane());
    }
    return out;
  }

  friend bool operator==(const SamplingMask&, const SamplingMask&) = default;
};

inline int acs_first_line(int h, int acs_lines) { return h / 2 - acs_lines / 2; }

namespace detail {

inline SamplingMask blank_mask(int h, int w, int frames, int accel, int acs_lines, Trajectory t) {
  require(h >= 1 && w >= 1 && frames >= 1, "invalid_argument", "mask dimensions must be positive");
  require(accel >= 1, "invalid_argument", "acceleration must be >= 1");
  require(acs_lines >= 0 && acs_lines <= h, "invalid_argument",
          "acs_lines " + std::to_string(acs_lines) + " exceeds height " + std::to_string(h));
  SamplingMask m;
  m.frames = frames;
  m.height = h;
  m.width = w;
  m.acs_lines = acs_lines;
  m.accel = accel;
  m.trajectory = t;
  m.mask.assign(static_cast<std::size_t>(frames) * h * w, 0);
  return m;
}

inline void set_line(SamplingMask& m, int f, int y) {
  for (int x = 0; x < m.width; ++x) m.at(f, y, x) = 1;
}

inline void force_acs(SamplingMask& m) {
  const int first = acs_first_line(m.height, m.acs_lines);
  for (int f = 0; f < m.frames; ++f)
    for (int y = first; y < first + m.acs_lines; ++y) set_line(m, f, y);
}

inline void fill_all(SamplingMask& m) { std::fill(m.mask.begin(), m.mask.end(), 1); }

}  // namespace detail

// Every accel-th line, offset by (frame mod accel), plus the ACS band.
inline SamplingMask uniform_kt_mask(int h, int w, int frames, int accel, int acs_lines, Rng& /*rng*/) {
  auto m = detail::blank_mask(h, w, frames, accel, acs_lines, Trajectory::Uniform);
  for (int f = 0; f < frames; ++f) {
    const int offset = f % accel;
    for (int y = offset; y < h; y += accel) detail::set_line(m, f, y);
  }
  detail::force_acs(m);
  return m;
}

// Lines drawn outside the ACS band per budget; the ACS band is additive.
inline int gaussian_line_budget(int h, int accel, int acs_lines) {
  const int budget = static_cast<int>(std::lround(static_cast<double>(h) / accel));
  return std::min(budget, h - acs_lines);
}

// Per frame: round(h/accel) distinct non-ACS lines drawn without
// replacement with weight exp(-(y-h/2)^2 / (2 sigma^2)), sigma = h/6.
inline SamplingMask gaussian_kt_mask(int h, int w, int frames, int accel, int acs_lines, Rng& rng) {
  auto m = detail::blank_mask(h, w, frames, accel, acs_lines, Trajectory::Gaussian);
  if (accel == 1) {
    detail::fill_all(m);
    return m;
  }
  const double sigma = h / 6.0;
  const int first = acs_first_line(h, acs_lines);
  const int budget = gaussian_line_budget(h, accel, acs_lines);
  std::vector<double> weight(h);
  for (int f = 0; f < frames; ++f) {
    for (int y = 0; y < h; ++y) {
      const double d = y - h / 2.0;
      const bool in_acs = y >= first && y < first + acs_lines;
      weight[y] = in_acs ? 0.0 : std::exp(-d * d / (2 * sigma * sigma));
    }
    for (int k = 0; k < budget; ++k) {
      double total = 0;
      for (double v : weight) total += v;
      double u = rng.uniform() * total;
      int pick = -1;
      for (int y = 0; y < h; ++y) {
        if (weight[y] <= 0) continue;
        pick = y;
        u -= weight[y];
        if (u < 0) break;
      }
      detail::set_line(m, f, pick);
      weight[pick] = 0;
    }
  }
  detail::force_acs(m);
  return m;
}

inline constexpr double kGoldenAngleDeg = 111.246;

inline int radial_spoke_count(int h, int accel) {
  return std::max(1, static_cast<int>(std::lround(std::numbers::pi / 2.0 * h / accel)));
}

// Rasterize one full-diameter spoke through (h/2, w/2). Offsets are
// sampled symmetrically so each spoke is point-symmetric about DC.
inline void rasterize_spoke(SamplingMask& m, int f, double theta) {
  const int cy = m.height / 2, cx = m.width / 2;
  const double reach = std::hypot(m.height / 2.0, m.width / 2.0);
  const int steps = static_cast<int>(std::ceil(reach / 0.5));
  const double c = std::cos(theta), s = std::sin(theta);
  for (int k = -steps; k <= steps; ++k) {
    const double r = 0.5 * k;
    const long dy = std::lround(r * s), dx = std::lround(r * c);
    const long y = cy + dy, x = cx + dx;
    if (y >= 0 && y < m.height && x >= 0 && x < m.width) m.at(f, y, x) = 1;
  }
}

// Pseudo-radial: round((pi/2) h/accel) evenly spaced spokes per frame,
// frame f rotated by f * 111.246 degrees. acs_lines > 0 additionally
// forces the central ACS band on (needed by sensitivity calibration).
inline SamplingMask radial_kt_mask(int h, int w, int frames, int accel, Rng& /*rng*/, int acs_lines = 0) {
  auto m = detail::blank_mask(h, w, frames, accel, acs_lines, Trajectory::Radial);
  if (accel == 1) {
    detail::fill_all(m);
    return m;
  }
  const int spokes = radial_spoke_count(h, accel);
  for (int f = 0; f < frames; ++f) {
    const double rot = f * kGoldenAngleDeg * std::numbers::pi / 180.0;
    for (int s = 0; s < spokes; ++s) rasterize_spoke(m, f, rot + s * std::numbers::pi / spokes);
  }
  detail::force_acs(m);
  return m;
}

inline SamplingMask make_mask(Trajectory t, int h, int w, int frames, int accel, int acs_lines, Rng& rng) {
  switch (t) {
    case Trajectory::Uniform: return uniform_kt_mask(h, w, frames, accel, acs_lines, rng);
    case Trajectory::Gaussian: return gaussian_kt_mask(h, w, frames, accel, acs_lines, rng);
    case Trajectory::Radial: return radial_kt_mask(h, w, frames, accel, rng, acs_lines);
  }
  throw Error("invalid_argument", "unknown trajectory");
}

inline double effective_acceleration(const SamplingMask& m) {
  const std::size_t n = m.sampled();
  require(n > 0, "invalid_argument", "mask has no samples");
  return static_cast<double>(m.mask.size()) / static_cast<double>(n);
}

}  // namespace genre
