#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "array.hpp"
#include "error.hpp"
#include "fft.hpp"
#include "gcmr.hpp"
#include "phantom.hpp"
#include "rng.hpp"
#include "sampling.hpp"

namespace genre {

struct DatasetConfig {
  int height = 64;
  int width = 64;
  int frames = 8;
  int coils = 4;
  int domains = kTrainingDomains;  // training domains; the held-out domain is added on top
  int samples_per_domain = 40;
  int unseen_samples = -1;         // -1: same as samples_per_domain, 0: no held-out domain
  std::uint64_t seed = 1;
  // Mask stored alongside each sequence (k0 role).
  int accel = 8;
  Trajectory trajectory = Trajectory::Uniform;
  int acs_lines = 16;

  int held_out_count() const { return unseen_samples < 0 ? samples_per_domain : unseen_samples; }

  void validate() const {
    require(height >= 32 && width >= 32, "invalid_argument", "dataset images must be at least 32x32");
    require(frames >= 5, "invalid_argument", "dataset needs at least 5 frames");
    require(coils >= 2, "invalid_argument", "dataset needs at least 2 coils");
    require(domains >= 1 && domains <= kTrainingDomains, "invalid_argument",
            "domains must be in [1, " + std::to_string(kTrainingDomains) + "]");
    require(samples_per_domain >= 1, "invalid_argument", "samples_per_domain must be >= 1");
    require(accel >= 1 && acs_lines >= 0 && acs_lines <= height, "invalid_argument", "invalid mask settings");
  }
};

// One simulated dynamic acquisition.
struct SequenceRecord {
  int domain = 0;
  int index = 0;
  CVolume<float> kspace;      // frames x coils, fully sampled
  CVolume<float> sens_truth;  // 1 x coils
  CVolume<float> gt;          // frames x 1, combined ground-truth images
  SamplingMask mask;          // stored acquisition mask (frames)

  int frames() const { return kspace.frames(); }
  int eval_center() const { return kspace.frames() / 2; }
};

struct Dataset {
  DatasetConfig config;
  std::vector<SequenceRecord> records;

  std::vector<std::size_t> of_domain(int d) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].domain == d) out.push_back(i);
    return out;
  }
  std::vector<int> domain_ids() const {
    std::vector<int> ids;
    for (const auto& r : records)
      if (std::find(ids.begin(), ids.end(), r.domain) == ids.end()) ids.push_back(r.domain);
    std::sort(ids.begin(), ids.end());
    return ids;
  }
};

template <class To, class From>
CVolume<To> cast_volume(const CVolume<From>& v) {
  CVolume<To> out(v.frames(), v.coils(), v.height(), v.width());
  for (std::size_t i = 0; i < v.size(); ++i)
    out.vec()[i] = {static_cast<To>(v.vec()[i].real()), static_cast<To>(v.vec()[i].imag())};
  return out;
}

inline SequenceRecord make_record(const DatasetConfig& cfg, int domain, int index) {
  Rng rng = Rng(cfg.seed).split(static_cast<std::uint64_t>(domain) * 1000003ULL + static_cast<std::uint64_t>(index));
  const auto seq = make_dynamic_phantom(cfg.height, cfg.width, cfg.frames, domain, rng);
  const auto mc = simulate_coils(seq, cfg.coils, rng);
  SequenceRecord r;
  r.domain = domain;
  r.index = index;
  r.kspace = cast_volume<float>(fft2c(mc.images));
  r.sens_truth = cast_volume<float>(mc.profiles.maps);
  CVolume<double> gt(cfg.frames, 1, cfg.height, cfg.width);
  for (int f = 0; f < cfg.frames; ++f) std::copy(seq.frames[f].vec().begin(), seq.frames[f].vec().end(), gt.slice(f, 0).begin());
  r.gt = cast_volume<float>(gt);
  r.mask = make_mask(cfg.trajectory, cfg.height, cfg.width, cfg.frames, cfg.accel, cfg.acs_lines, rng);
  return r;
}

// Worker count: GENRE_THREADS caps the hardware concurrency.
inline int worker_count() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("GENRE_THREADS")) {
    try {
      n = std::min(n, std::max(1, std::stoi(env)));
    } catch (const std::exception&) {
      throw Error("invalid_argument", std::string("GENRE_THREADS is not an integer: ") + env);
    }
  }
  return n;
}

// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index is
// independent, so results do not depend on the worker count.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  workers = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline Dataset generate_dataset(const DatasetConfig& cfg, int workers = 1) {
  cfg.validate();
  std::vector<std::pair<int, int>> jobs;
  for (int d = 0; d < cfg.domains; ++d)
    for (int i = 0; i < cfg.samples_per_domain; ++i) jobs.emplace_back(d, i);
  for (int i = 0; i < cfg.held_out_count(); ++i) jobs.emplace_back(kUnseenDomain, i);
  Dataset ds;
  ds.config = cfg;
  ds.records.resize(jobs.size());
  parallel_for(jobs.size(), workers, [&](std::size_t j) { ds.records[j] = make_record(cfg, jobs[j].first, jobs[j].second); });
  return ds;
}

// ---------------------------------------------------------------------------
// On-disk layout: one GCMR file per tensor, a manifest with one line per
// file ("path role domain frame") and dataset.cfg with the generator
// settings. The frame column is the evaluation center frame.

inline const std::vector<std::string>& manifest_roles() {
  static const std::vector<std::string> roles = {"k0", "kG", "mask", "sens-truth", "gt-image"};
  return roles;
}

inline std::string config_text(const DatasetConfig& c) {
  std::ostringstream o;
  o << "height = " << c.height << "\nwidth = " << c.width << "\nframes = " << c.frames << "\ncoils = " << c.coils
    << "\ndomains = " << c.domains << "\nsamples_per_domain = " << c.samples_per_domain
    << "\nunseen_samples = " << c.held_out_count() << "\nseed = " << c.seed << "\naccel = " << c.accel
    << "\ntrajectory = " << to_string(c.trajectory) << "\nacs_lines = " << c.acs_lines << "\n";
  return o.str();
}

inline std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, "bad_format", origin + ":" + std::to_string(lineno) + ": expected key = value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline DatasetConfig parse_config_text(const std::string& text, const std::string& origin) {
  const auto kv = parse_key_values(text, origin);
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    require(it != kv.end(), "bad_format", origin + ": missing key '" + k + "'");
    return it->second;
  };
  DatasetConfig c;
  try {
    c.height = std::stoi(get("height"));
    c.width = std::stoi(get("width"));
    c.frames = std::stoi(get("frames"));
    c.coils = std::stoi(get("coils"));
    c.domains = std::stoi(get("domains"));
    c.samples_per_domain = std::stoi(get("samples_per_domain"));
    c.unseen_samples = std::stoi(get("unseen_samples"));
    c.seed = std::stoull(get("seed"));
    c.accel = std::stoi(get("accel"));
    c.acs_lines = std::stoi(get("acs_lines"));
  } catch (const std::logic_error&) {
    throw Error("bad_format", origin + ": non-numeric value");
  }
  c.trajectory = parse_trajectory(get("trajectory"));
  return c;
}

inline std::string record_stem(const SequenceRecord& r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "d%d/s%04d", r.domain, r.index);
  return buf;
}

inline GcmrTensor mask_tensor(const SamplingMask& m) {
  std::vector<float> v(m.mask.begin(), m.mask.end());
  return make_f32({static_cast<std::uint32_t>(m.frames), static_cast<std::uint32_t>(m.height),
                   static_cast<std::uint32_t>(m.width)},
                  v);
}

inline SamplingMask tensor_mask(const GcmrTensor& t) {
  require(t.dims.size() == 3, "shape_mismatch", "mask tensor must be frames x h x w");
  const auto v = as_f64(t);
  SamplingMask m;
  m.frames = static_cast<int>(t.dims[0]);
  m.height = static_cast<int>(t.dims[1]);
  m.width = static_cast<int>(t.dims[2]);
  m.mask.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    require(v[i] == 0.0 || v[i] == 1.0, "bad_format", "mask entries must be 0 or 1");
    m.mask[i] = static_cast<std::uint8_t>(v[i]);
  }
  return m;
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir, int workers = 1) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> lines(ds.records.size());
  parallel_for(ds.records.size(), workers, [&](std::size_t i) {
    const auto& r = ds.records[i];
    const std::string stem = record_stem(r);
    const std::string tail = " " + std::to_string(r.domain) + " " + std::to_string(r.eval_center()) + "\n";
    save_gcmr(dir / (stem + "_k0.gcmr"), volume_tensor(apply_mask(r.kspace, r.mask)));
    save_gcmr(dir / (stem + "_kG.gcmr"), volume_tensor(r.kspace));
    save_gcmr(dir / (stem + "_mask.gcmr"), mask_tensor(r.mask));
    save_gcmr(dir / (stem + "_sens.gcmr"), volume_tensor(r.sens_truth));
    save_gcmr(dir / (stem + "_gt.gcmr"), volume_tensor(r.gt));
    lines[i] = stem + "_k0.gcmr k0" + tail + stem + "_kG.gcmr kG" + tail + stem + "_mask.gcmr mask" + tail + stem +
               "_sens.gcmr sens-truth" + tail + stem + "_gt.gcmr gt-image" + tail;
  });
  std::string manifest;
  for (const auto& l : lines) manifest += l;
  write_file(dir / "manifest.txt", std::span(reinterpret_cast<const std::uint8_t*>(manifest.data()), manifest.size()));
  const auto cfg = config_text(ds.config);
  write_file(dir / "dataset.cfg", std::span(reinterpret_cast<const std::uint8_t*>(cfg.data()), cfg.size()));
}

struct ManifestEntry {
  std::string path, role;
  int domain = 0, frame = 0;
};

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  require(std::filesystem::exists(dir / "manifest.txt"), "missing_dataset",
          "no manifest.txt in " + dir.string());
  std::ifstream in(dir / "manifest.txt");
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    require(static_cast<bool>(ls >> e.path >> e.role >> e.domain >> e.frame), "bad_format",
            "manifest line " + std::to_string(lineno) + " is malformed");
    const auto& roles = manifest_roles();
    require(std::find(roles.begin(), roles.end(), e.role) != roles.end(), "bad_format",
            "manifest line " + std::to_string(lineno) + ": unknown role '" + e.role + "'");
    out.push_back(std::move(e));
  }
  return out;
}

// Loads records listed in the manifest (k0 is re-derivable and skipped).
inline Dataset read_dataset(const std::filesystem::path& dir, int workers = 1) {
  const auto entries = read_manifest(dir);
  require(std::filesystem::exists(dir / "dataset.cfg"), "missing_dataset", "no dataset.cfg in " + dir.string());
  const auto bytes = read_file(dir / "dataset.cfg");
  Dataset ds;
  ds.config = parse_config_text(std::string(bytes.begin(), bytes.end()), (dir / "dataset.cfg").string());
  std::vector<std::string> stems;
  std::map<std::string, int> domain_of;
  for (const auto& e : entries) {
    const auto cut = e.path.rfind('_');
    require(cut != std::string::npos, "bad_format", "unexpected manifest path " + e.path);
    const auto stem = e.path.substr(0, cut);
    if (!domain_of.contains(stem)) {
      stems.push_back(stem);
      domain_of[stem] = e.domain;
    }
  }
  ds.records.resize(stems.size());
  parallel_for(stems.size(), workers, [&](std::size_t i) {
    auto& r = ds.records[i];
    r.domain = domain_of[stems[i]];
    const auto slash = stems[i].rfind("/s");
    r.index = slash == std::string::npos ? static_cast<int>(i) : std::stoi(stems[i].substr(slash + 2));
    r.kspace = tensor_volume<float>(load_gcmr(dir / (stems[i] + "_kG.gcmr")));
    r.sens_truth = tensor_volume<float>(load_gcmr(dir / (stems[i] + "_sens.gcmr")));
    r.gt = tensor_volume<float>(load_gcmr(dir / (stems[i] + "_gt.gcmr")));
    r.mask = tensor_mask(load_gcmr(dir / (stems[i] + "_mask.gcmr")));
    r.mask.accel = ds.config.accel;
    r.mask.acs_lines = ds.config.acs_lines;
    r.mask.trajectory = ds.config.trajectory;
  });
  return ds;
}

// Network input for one central frame: adjacent-frame window of the
// sequence, masked by the matching window of `full_mask`.
template <class T>
struct TrainItem {
  KSpaceVolume<T> k0, kG;
  SamplingMask mask;
  int domain = 0;
  int center = 0;
};

template <class T>
TrainItem<T> make_item(const SequenceRecord& r, int center, const SamplingMask& full_mask, int adjacent) {
  require(full_mask.frames == r.frames() && full_mask.height == r.kspace.height() &&
              full_mask.width == r.kspace.width(),
          "shape_mismatch", "mask does not match sequence");
  const auto ids = adjacent_frames(center, adjacent, r.frames());
  TrainItem<T> item;
  item.domain = r.domain;
  item.center = center;
  item.kG = KSpaceVolume<T>(adjacent, r.kspace.coils(), r.kspace.height(), r.kspace.width());
  for (int a = 0; a < adjacent; ++a) {
    auto src = r.kspace.frame(ids[a]);
    auto dst = item.kG.frame(a);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = {static_cast<T>(src[i].real()), static_cast<T>(src[i].imag())};
  }
  item.mask = full_mask.window(ids);
  item.k0 = apply_mask(item.kG, item.mask);
  return item;
}

}  // namespace genre
