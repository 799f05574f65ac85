#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "array.hpp"
#include "error.hpp"

namespace genre {

// GCMR tensor files: "GCMR1", version, dtype, ndim, u32 dims, then the
// little-endian row-major payload.
enum class DType : std::uint8_t { F32 = 0, C64 = 1, F64 = 2 };

inline constexpr std::uint8_t kGcmrVersion = 1;
inline constexpr char kGcmrMagic[5] = {'G', 'C', 'M', 'R', '1'};

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32: return 4;
    case DType::C64: return 8;
    case DType::F64: return 8;
  }
  throw Error("bad_format", "unknown dtype");
}

struct GcmrTensor {
  DType dtype = DType::F64;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;  // little-endian

  std::size_t count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    require(pos_ + n <= b_.size(), "truncated", std::string("unexpected end of data reading ") + what);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t uint(int bytes, const char* what) {
    auto s = take(bytes, what);
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(s[i]) << (8 * i);
    return v;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

template <class F>
void put_float(std::vector<std::uint8_t>& out, F v) {
  if constexpr (sizeof(F) == 4)
    put_u32(out, std::bit_cast<std::uint32_t>(v));
  else
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

template <class F>
F get_float(const std::uint8_t* p) {
  if constexpr (sizeof(F) == 4) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return std::bit_cast<F>(v);
  } else {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<F>(v);
  }
}

}  // namespace detail

inline GcmrTensor make_f32(std::vector<std::uint32_t> dims, std::span<const float> v) {
  GcmrTensor t{DType::F32, std::move(dims), {}};
  require(t.count() == v.size(), "shape_mismatch", "GCMR dims do not match data");
  t.payload.reserve(4 * v.size());
  for (float x : v) detail::put_float(t.payload, x);
  return t;
}

inline GcmrTensor make_f64(std::vector<std::uint32_t> dims, std::span<const double> v) {
  GcmrTensor t{DType::F64, std::move(dims), {}};
  require(t.count() == v.size(), "shape_mismatch", "GCMR dims do not match data");
  t.payload.reserve(8 * v.size());
  for (double x : v) detail::put_float(t.payload, x);
  return t;
}

template <class R>
GcmrTensor make_c64(std::vector<std::uint32_t> dims, std::span<const std::complex<R>> v) {
  GcmrTensor t{DType::C64, std::move(dims), {}};
  require(t.count() == v.size(), "shape_mismatch", "GCMR dims do not match data");
  t.payload.reserve(8 * v.size());
  for (const auto& z : v) {
    detail::put_float(t.payload, static_cast<float>(z.real()));
    detail::put_float(t.payload, static_cast<float>(z.imag()));
  }
  return t;
}

inline std::vector<float> as_f32(const GcmrTensor& t) {
  require(t.dtype == DType::F32, "bad_format", "expected real 32-bit tensor");
  std::vector<float> v(t.count());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = detail::get_float<float>(t.payload.data() + 4 * i);
  return v;
}

// Real tensors of either width, widened to double.
inline std::vector<double> as_f64(const GcmrTensor& t) {
  if (t.dtype == DType::F32) {
    const auto f = as_f32(t);
    return {f.begin(), f.end()};
  }
  require(t.dtype == DType::F64, "bad_format", "expected real tensor");
  std::vector<double> v(t.count());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = detail::get_float<double>(t.payload.data() + 8 * i);
  return v;
}

template <class R = float>
std::vector<std::complex<R>> as_complex(const GcmrTensor& t) {
  require(t.dtype == DType::C64, "bad_format", "expected complex tensor");
  std::vector<std::complex<R>> v(t.count());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto* p = t.payload.data() + 8 * i;
    v[i] = {static_cast<R>(detail::get_float<float>(p)), static_cast<R>(detail::get_float<float>(p + 4))};
  }
  return v;
}

inline std::vector<std::uint8_t> encode(const GcmrTensor& t) {
  require(t.dims.size() <= 255, "invalid_argument", "too many dimensions");
  require(t.payload.size() == t.count() * dtype_size(t.dtype), "shape_mismatch", "payload size mismatch");
  std::vector<std::uint8_t> out(std::begin(kGcmrMagic), std::end(kGcmrMagic));
  out.push_back(kGcmrVersion);
  out.push_back(static_cast<std::uint8_t>(t.dtype));
  out.push_back(static_cast<std::uint8_t>(t.dims.size()));
  for (auto d : t.dims) detail::put_u32(out, d);
  out.insert(out.end(), t.payload.begin(), t.payload.end());
  return out;
}

inline GcmrTensor decode(std::span<const std::uint8_t> bytes) {
  detail::Reader r(bytes);
  auto magic = r.take(5, "magic");
  require(std::equal(magic.begin(), magic.end(), std::begin(kGcmrMagic)), "bad_magic", "not a GCMR file");
  const auto version = r.uint(1, "version");
  require(version == kGcmrVersion, "version_mismatch", "unsupported GCMR version " + std::to_string(version));
  const auto code = r.uint(1, "dtype");
  require(code <= 2, "bad_format", "unknown dtype code " + std::to_string(code));
  GcmrTensor t;
  t.dtype = static_cast<DType>(code);
  const auto ndim = r.uint(1, "ndim");
  for (std::uint64_t i = 0; i < ndim; ++i) t.dims.push_back(static_cast<std::uint32_t>(r.uint(4, "dims")));
  auto body = r.take(t.count() * dtype_size(t.dtype), "payload");
  t.payload.assign(body.begin(), body.end());
  require(r.done(), "bad_format", "trailing bytes after GCMR payload");
  return t;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(in.good(), "io_error", "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  require(out.good(), "io_error", "cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), "io_error", "write failed for " + p.string());
}

inline void save_gcmr(const std::filesystem::path& p, const GcmrTensor& t) { write_file(p, encode(t)); }
inline GcmrTensor load_gcmr(const std::filesystem::path& p) { return decode(read_file(p)); }

// Volumes as frames x coils x h x w complex tensors.
template <class R>
GcmrTensor volume_tensor(const CVolume<R>& v) {
  return make_c64<R>({static_cast<std::uint32_t>(v.frames()), static_cast<std::uint32_t>(v.coils()),
                      static_cast<std::uint32_t>(v.height()), static_cast<std::uint32_t>(v.width())},
                     v.vec());
}

template <class R>
CVolume<R> tensor_volume(const GcmrTensor& t) {
  require(t.dims.size() == 4 || t.dims.size() == 3 || t.dims.size() == 2, "shape_mismatch",
          "expected a 2-, 3- or 4-D complex tensor");
  std::vector<int> d(t.dims.begin(), t.dims.end());
  while (d.size() < 4) d.insert(d.begin(), 1);
  CVolume<R> v(d[0], d[1], d[2], d[3]);
  v.vec() = as_complex<R>(t);
  return v;
}

// ---------------------------------------------------------------------------
// Named collections of GCMR blobs: "GCKP1", version, u32 count, then per
// entry u16 name length, name, u64 blob length, blob.

inline constexpr char kCheckpointMagic[5] = {'G', 'C', 'K', 'P', '1'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

class Archive {
 public:
  void put(const std::string& name, const GcmrTensor& t) {
    require(name.size() < 65536, "invalid_argument", "entry name too long");
    for (const auto& e : entries_) require(e.first != name, "invalid_argument", "duplicate entry " + name);
    entries_.emplace_back(name, t);
  }
  void put_f64(const std::string& name, std::span<const double> v) {
    put(name, make_f64({static_cast<std::uint32_t>(v.size())}, v));
  }
  void put_u64(const std::string& name, std::uint64_t v) {
    const double halves[2] = {static_cast<double>(v >> 32), static_cast<double>(v & 0xffffffffULL)};
    put_f64(name, halves);
  }

  bool has(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.first == name) return true;
    return false;
  }
  const GcmrTensor& get(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.first == name) return e.second;
    throw Error("bad_format", "checkpoint has no entry '" + name + "'");
  }
  std::vector<double> get_f64(const std::string& name) const { return as_f64(get(name)); }
  std::uint64_t get_u64(const std::string& name) const {
    const auto v = get_f64(name);
    require(v.size() == 2, "bad_format", "entry '" + name + "' is not an integer");
    return (static_cast<std::uint64_t>(v[0]) << 32) | static_cast<std::uint64_t>(v[1]);
  }
  const std::vector<std::pair<std::string, GcmrTensor>>& entries() const { return entries_; }

  std::vector<std::uint8_t> encode() const {
    std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    out.push_back(kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, t] : entries_) {
      detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
      out.insert(out.end(), name.begin(), name.end());
      const auto blob = genre::encode(t);
      detail::put_u64(out, blob.size());
      out.insert(out.end(), blob.begin(), blob.end());
    }
    return out;
  }

  static Archive decode(std::span<const std::uint8_t> bytes) {
    detail::Reader r(bytes);
    auto magic = r.take(5, "magic");
    require(std::equal(magic.begin(), magic.end(), std::begin(kCheckpointMagic)), "bad_magic",
            "not a checkpoint file");
    const auto version = r.uint(1, "version");
    require(version == kCheckpointVersion, "version_mismatch",
            "unsupported checkpoint version " + std::to_string(version));
    const auto n = r.uint(4, "entry count");
    Archive a;
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto len = r.uint(2, "name length");
      auto name = r.take(len, "name");
      const auto blob_len = r.uint(8, "blob length");
      auto blob = r.take(blob_len, "entry");
      a.entries_.emplace_back(std::string(name.begin(), name.end()), genre::decode(blob));
    }
    require(r.done(), "bad_format", "trailing bytes after checkpoint entries");
    return a;
  }

  void save(const std::filesystem::path& p) const { write_file(p, encode()); }
  static Archive load(const std::filesystem::path& p) { return decode(read_file(p)); }

 private:
  std::vector<std::pair<std::string, GcmrTensor>> entries_;
};

// ---------------------------------------------------------------------------
// Binary portable graymap (P5). Values are mapped linearly from [lo, hi]
// and clipped; 16-bit samples are big-endian as the format requires.

template <class T>
void write_pgm(const std::filesystem::path& p, const RealImage<T>& img, double lo, double hi, bool sixteen_bit = false) {
  require(hi > lo, "invalid_argument", "pgm range must be increasing");
  const int maxval = sixteen_bit ? 65535 : 255;
  const std::string header =
      "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n" + std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double u = std::clamp((static_cast<double>(img[i]) - lo) / (hi - lo), 0.0, 1.0);
    const auto q = static_cast<std::uint32_t>(std::lround(u * maxval));
    if (sixteen_bit) out.push_back(static_cast<std::uint8_t>(q >> 8));
    out.push_back(static_cast<std::uint8_t>(q & 0xff));
  }
  write_file(p, out);
}

struct PgmImage {
  int width = 0, height = 0, maxval = 0;
  std::vector<std::uint16_t> pixels;
};

inline PgmImage read_pgm(const std::filesystem::path& p) {
  const auto bytes = read_file(p);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  require(token() == "P5", "bad_format", "not a binary PGM file");
  PgmImage img;
  img.width = std::stoi(token());
  img.height = std::stoi(token());
  img.maxval = std::stoi(token());
  ++pos;
  const std::size_t bpp = img.maxval > 255 ? 2 : 1;
  require(bytes.size() - pos == bpp * img.width * img.height, "truncated", "PGM payload size mismatch");
  for (std::size_t i = 0; i < static_cast<std::size_t>(img.width) * img.height; ++i)
    img.pixels.push_back(bpp == 2 ? static_cast<std::uint16_t>((bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1])
                                  : bytes[pos + i]);
  return img;
}

}  // namespace genre
