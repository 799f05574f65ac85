#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "diffnet.hpp"
#include "error.hpp"
#include "gcmr.hpp"
#include "losses.hpp"
#include "mri.hpp"
#include "rng.hpp"
#include "sampling.hpp"
#include "unroll.hpp"

namespace genre {

// ---------------------------------------------------------------------------
// Loss weighting.

inline constexpr double kWeightTotal = 3.0;
inline constexpr double kWeightFloor = 0.01;
inline constexpr double kCovMeanFloor = 1e-8;

struct LossWeights {
  double lambda1 = 1.0;  // fidelity
  double lambda2 = 1.0;  // edge-aware region
  double lambda3 = 1.0;  // distribution alignment

  double sum() const { return lambda1 + lambda2 + lambda3; }
  std::array<double, 3> values() const { return {lambda1, lambda2, lambda3}; }
  static LossWeights from(const std::array<double, 3>& v) { return {v[0], v[1], v[2]}; }
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

// Trailing per-loss scalar series (fidelity, EAR, SDA).
struct LossHistory {
  int window = 50;
  std::array<std::deque<double>, 3> series;

  void push(const std::array<double, 3>& v) {
    for (int i = 0; i < 3; ++i) {
      series[i].push_back(v[i]);
      while (static_cast<int>(series[i].size()) > window) series[i].pop_front();
    }
  }
  std::size_t size() const { return series[0].size(); }
  friend bool operator==(const LossHistory&, const LossHistory&) = default;
};

// Coefficient of variation of a series: population std / max(mean, floor).
inline double coefficient_of_variation(const std::deque<double>& s) {
  const double n = static_cast<double>(s.size());
  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / n;
  double var = 0;
  for (double v : s) var += (v - mean) * (v - mean);
  return std::sqrt(var / n) / std::max(mean, kCovMeanFloor);
}

// Weights proportional to each active loss's CoV, scaled to sum to 3 and
// floored at 0.01 (floored entries are pinned and the rest rescaled until
// none drop below the floor). Inactive losses get weight 0.
inline LossWeights cov_update_weights(const LossHistory& h, const LossWeights& current,
                                      std::array<bool, 3> active = {true, true, true}) {
  std::vector<int> idx;
  for (int i = 0; i < 3; ++i)
    if (active[i]) idx.push_back(i);
  if (idx.empty()) return current;
  for (int i : idx)
    if (h.series[i].size() < 2) return current;
  std::array<double, 3> cv{}, w{};
  double total = 0;
  for (int i : idx) total += cv[i] = coefficient_of_variation(h.series[i]);
  if (!(total > 0) || !std::isfinite(total)) {
    for (int i : idx) w[i] = kWeightTotal / static_cast<double>(idx.size());
    return LossWeights::from(w);
  }
  std::array<bool, 3> pinned{};
  for (int round = 0; round < 3; ++round) {
    double free_cv = 0, budget = kWeightTotal;
    for (int i : idx) {
      if (pinned[i])
        budget -= kWeightFloor;
      else
        free_cv += cv[i];
    }
    bool changed = false;
    for (int i : idx) {
      if (pinned[i]) {
        w[i] = kWeightFloor;
        continue;
      }
      w[i] = free_cv > 0 ? budget * cv[i] / free_cv : kWeightFloor;
      if (w[i] < kWeightFloor) {
        pinned[i] = true;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return LossWeights::from(w);
}

// Equal-length phases over the epochs; phase p enables the first p+1
// accelerations.
inline std::vector<int> curriculum_schedule(int epoch, int epochs, const std::vector<int>& accelerations) {
  require(epochs >= 1 && epoch >= 0 && epoch < epochs, "invalid_argument",
          "epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(epochs) + ")");
  require(!accelerations.empty(), "invalid_argument", "no accelerations configured");
  const int n = static_cast<int>(accelerations.size());
  const int phase = static_cast<int>(static_cast<long long>(epoch) * n / epochs);
  return {accelerations.begin(), accelerations.begin() + phase + 1};
}

// ---------------------------------------------------------------------------
// Configuration and state.

struct TrainConfig {
  int epochs = 20;
  int batch = 1;
  std::vector<int> accelerations{8, 16, 24};
  std::vector<Trajectory> trajectories{Trajectory::Uniform, Trajectory::Gaussian, Trajectory::Radial};
  std::uint64_t seed = 1;
  GeneratorConfig gen;
  double lr = 0.002;
  double weight_decay = 0.1;
  double clip = 0.1;
  int lr_step = 11;
  double lr_gamma = 0.1;
  int cov_window = 50;
  int sda_window = 4;
  int domains = kTrainingDomains;
  bool use_ear = true;
  bool use_sda = true;
  bool adversarial = true;
  bool fixed_weights = false;  // keep initial_weights instead of CoV updates
  LossWeights initial_weights{};
  EarThreshold ear{};
  int disc_channels = 8;
  long long max_iterations = 0;  // 0: epochs x training samples

  std::array<bool, 3> active_losses() const { return {true, use_ear, use_sda}; }

  void validate() const {
    gen.validate();
    require(epochs >= 1, "invalid_argument", "epochs must be >= 1");
    require(batch == 1, "invalid_argument", "only batch size 1 is supported");
    require(!accelerations.empty() && std::is_sorted(accelerations.begin(), accelerations.end()) &&
                accelerations.front() >= 1,
            "invalid_argument", "accelerations must be positive and sorted ascending");
    require(!trajectories.empty(), "invalid_argument", "no trajectories configured");
    require(lr > 0 && weight_decay >= 0 && clip > 0 && lr_step >= 1 && lr_gamma > 0, "invalid_argument",
            "optimizer settings must be positive");
    require(cov_window >= 2 && sda_window >= 2, "invalid_argument", "cov_window and sda_window must be >= 2");
    require(domains >= 1 && domains <= kTrainingDomains, "invalid_argument", "domains out of range");
    require(disc_channels >= 1 && max_iterations >= 0, "invalid_argument", "invalid discriminator/iteration settings");
    for (double w : initial_weights.values()) require(w >= 0, "invalid_argument", "loss weights must be >= 0");
  }

  AdamWOptions optimizer(double rate) const { return {rate, 0.9, 0.999, 1e-8, weight_decay}; }
};

template <class T>
struct TrainState {
  TrainConfig config;
  Generator<T> gen;
  Discriminator<T> disc;
  LossWeights weights;
  LossHistory history;
  FeatureBank bank;
  long long iteration = 0;

  static TrainState create(const TrainConfig& cfg) {
    cfg.validate();
    TrainState s;
    s.config = cfg;
    Rng gen_rng = Rng(cfg.seed).split(0x6e6567ULL);
    Rng disc_rng = Rng(cfg.seed).split(0x646973ULL);
    s.gen = Generator<T>::create(cfg.gen, gen_rng);
    s.disc = Discriminator<T>::create(disc_rng, cfg.disc_channels, cfg.gen.slope);
    s.weights = cfg.initial_weights;
    if (!cfg.fixed_weights) {
      auto w = cfg.initial_weights.values();
      const auto active = cfg.active_losses();
      int n = 0;
      for (int i = 0; i < 3; ++i) n += active[i];
      for (int i = 0; i < 3; ++i) w[i] = active[i] ? kWeightTotal / n : 0.0;
      s.weights = LossWeights::from(w);
    }
    s.history.window = cfg.cov_window;
    s.bank = FeatureBank(cfg.gen.unrolls, cfg.domains, cfg.sda_window);
    return s;
  }
};

struct LossRecord {
  long long step = 0;
  int epoch = 0;
  int domain = 0;
  int accel = 0;
  Trajectory trajectory = Trajectory::Uniform;
  int center = 0;
  double fidelity = 0;  // summed over unroll steps
  double ear = 0;
  double sda = 0;
  double gan = 0;
  double disc = 0;      // mean discriminator loss over the step updates
  LossWeights weights;  // after this iteration's update
};

// ---------------------------------------------------------------------------
// Sample order.

inline std::vector<std::size_t> training_records(const Dataset& ds, int domains) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    if (ds.records[i].domain < domains) out.push_back(i);
  return out;
}

// Per-domain shuffle, then round-robin across domains.
inline std::vector<std::size_t> epoch_order(const Dataset& ds, int domains, std::uint64_t seed, int epoch) {
  Rng rng = Rng(seed).split(0x65706f6368000000ULL + static_cast<std::uint64_t>(epoch));
  std::vector<std::vector<std::size_t>> per(domains);
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    if (ds.records[i].domain < domains) per[ds.records[i].domain].push_back(i);
  for (auto& v : per)
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  std::vector<std::size_t> out;
  for (std::size_t k = 0;; ++k) {
    bool any = false;
    for (const auto& v : per)
      if (k < v.size()) {
        out.push_back(v[k]);
        any = true;
      }
    if (!any) break;
  }
  return out;
}

inline long long total_iterations(const Dataset& ds, const TrainConfig& cfg) {
  const long long n = static_cast<long long>(training_records(ds, cfg.domains).size());
  const long long full = n * cfg.epochs;
  return cfg.max_iterations > 0 ? std::min(full, cfg.max_iterations) : full;
}

struct DrawnSample {
  std::size_t record = 0;
  int epoch = 0;
  int center = 0;
  int accel = 0;
  Trajectory trajectory = Trajectory::Uniform;
  SamplingMask mask;  // over all frames of the record
};

// Everything random about iteration `it` derives from (seed, it) alone, so
// training can resume from any iteration.
inline DrawnSample draw_sample(const Dataset& ds, const TrainConfig& cfg, long long it) {
  const auto train = training_records(ds, cfg.domains);
  require(!train.empty(), "empty_dataset", "no training records for the configured domains");
  const long long n = static_cast<long long>(train.size());
  DrawnSample s;
  s.epoch = static_cast<int>(std::min<long long>(it / n, cfg.epochs - 1));
  s.record = epoch_order(ds, cfg.domains, cfg.seed, static_cast<int>(it / n))[it % n];
  const auto& r = ds.records[s.record];
  Rng rng = Rng(cfg.seed).split(0x6974657200000000ULL + static_cast<std::uint64_t>(it));
  s.center = static_cast<int>(rng.below(r.frames()));
  s.trajectory = cfg.trajectories[rng.below(cfg.trajectories.size())];
  const auto accels = curriculum_schedule(s.epoch, cfg.epochs, cfg.accelerations);
  s.accel = accels[rng.below(accels.size())];
  s.mask = make_mask(s.trajectory, r.kspace.height(), r.kspace.width(), r.frames(), s.accel, cfg.gen.acs_lines, rng);
  return s;
}

// ---------------------------------------------------------------------------
// One training iteration.

namespace detail {

inline void check_finite_losses(long long it, int t, double fid, double ear, double sda) {
  if (std::isfinite(fid) && std::isfinite(ear) && std::isfinite(sda)) return;
  char buf[256];
  std::snprintf(buf, sizeof buf, "non-finite loss at iteration %lld step %d (L_Fid=%g L_EAR=%g L_SDA=%g)", it, t, fid,
                ear, sda);
  throw Error("non_finite", buf);
}

template <class T>
double max_value(const RealImage<T>& img) {
  double m = 0;
  for (std::size_t i = 0; i < img.size(); ++i) m = std::max(m, static_cast<double>(img[i]));
  return m;
}

template <class T>
Tensor4<T> logits_grad(const Tensor4<T>& logits, const std::vector<T>& g) {
  Tensor4<T> out(logits.n, logits.c, logits.h, logits.w);
  std::copy(g.begin(), g.end(), out.data.begin());
  return out;
}

// One discriminator update on (real, fake) with the given condition;
// returns the summed BCE.
template <class T>
double discriminator_step(Discriminator<T>& disc, const RealImage<T>& real, const RealImage<T>& fake,
                          const RealImage<T>& cond, const TrainConfig& cfg, double rate) {
  typename Discriminator<T>::Cache cr, cf;
  const auto lr_real = disc.forward(real, cond, cr);
  const auto lr_fake = disc.forward(fake, cond, cf);
  const auto br = bce_with_logits<T>(lr_real.data, kLabelReal);
  const auto bf = bce_with_logits<T>(lr_fake.data, kLabelFake);
  require(std::isfinite(br.value) && std::isfinite(bf.value), "non_finite", "non-finite discriminator loss");
  disc.params().zero_grad();
  disc.backward(cr, logits_grad(lr_real, br.grad));
  disc.backward(cf, logits_grad(lr_fake, bf.grad));
  clip_grad_norm(disc.params(), cfg.clip);
  adamw_step(disc.params(), cfg.optimizer(rate));
  return br.value + bf.value;
}

}  // namespace detail

// Per unroll step: fidelity + EAR + SDA weighted by the current lambdas,
// then one discriminator update on (ground truth, step reconstruction).
// After the loop, the adversarial term on the final reconstruction, the CoV
// weight update, clipping and one AdamW step on the generator.
template <class T>
LossRecord train_iteration(TrainState<T>& st, const TrainItem<T>& item, double rate) {
  const TrainConfig& cfg = st.config;
  require(item.domain >= 0 && item.domain < cfg.domains, "invalid_argument",
          "sample domain " + std::to_string(item.domain) + " is not a training domain");
  const auto tr = st.gen.forward(item.k0, item.mask);
  const int cf = tr.central(), steps = tr.unrolls();
  const int H = item.k0.height(), W = item.k0.width();
  auto grads = GeneratorGrads<T>::zeros(tr);
  const LossWeights w = st.weights;

  // Ground truth and zero-filled condition use the estimated maps but are
  // treated as constants.
  const auto gt = MagnitudeCombine<T>::forward(item.kG, cf, tr.sens).magnitude;
  const auto zf = MagnitudeCombine<T>::forward(item.k0, cf, tr.sens).magnitude;
  const double range = detail::max_value(gt);
  require(range > 0, "invalid_argument", "ground-truth image is all zero");

  LossRecord rec;
  rec.step = st.iteration;
  rec.domain = item.domain;
  rec.center = item.center;
  rec.accel = item.mask.accel;
  rec.trajectory = item.mask.trajectory;
  MagnitudeCombine<T> last;
  double disc_total = 0;
  for (int t = 0; t < steps; ++t) {
    const auto& kt = tr.k[t + 1];
    auto mc = MagnitudeCombine<T>::forward(kt, cf, tr.sens);
    const auto phys = kspace_phys_loss<T>(kt.frame(cf), item.kG.frame(cf));
    const auto ss = ssim_eval(mc.magnitude, gt, range, true);
    const double l_fid = phys.magnitude + phys.phase + (1.0 - ss.value);
    RealImage<T> g_mag(H, W);
    for (std::size_t i = 0; i < g_mag.size(); ++i) g_mag[i] = static_cast<T>(-w.lambda1 * ss.grad_x[i]);
    auto gk = grads.k_central[t].frame(0);
    for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += static_cast<T>(w.lambda1) * phys.grad[i];

    double l_ear = 0;
    if (cfg.use_ear) {
      const auto e = ear_loss(mc.magnitude, gt, range, cfg.ear, false);
      l_ear = e.value;
      for (std::size_t i = 0; i < g_mag.size(); ++i) g_mag[i] += static_cast<T>(w.lambda2 * e.grad_rec[i]);
    }
    mc.backward(g_mag, tr.sens, gk, &grads.sens);

    double l_sda = 0;
    if (cfg.use_sda) {
      st.bank.update(t, item.domain, tr.steps[t].pooled);
      const auto s = sda_layer(st.bank, t);
      l_sda = s.value;
      if (!s.grad_newest.empty()) {
        grads.pooled[t] = s.grad_newest;
        for (auto& g : grads.pooled[t]) g *= w.lambda3;
      }
    }
    detail::check_finite_losses(st.iteration, t, l_fid, l_ear, l_sda);
    rec.fidelity += l_fid;
    rec.ear += l_ear;
    rec.sda += l_sda;

    if (cfg.adversarial) disc_total += detail::discriminator_step(st.disc, gt, mc.magnitude, zf, cfg, rate);
    if (t == steps - 1) last = std::move(mc);
  }
  rec.disc = cfg.adversarial ? disc_total / steps : 0.0;

  if (cfg.adversarial) {
    typename Discriminator<T>::Cache cache;
    const auto logits = st.disc.forward(last.magnitude, zf, cache);
    const auto b = bce_with_logits<T>(logits.data, kLabelReal);
    detail::check_finite_losses(st.iteration, steps, b.value, 0, 0);
    rec.gan = b.value;
    const auto g_in = st.disc.input_grad(cache, detail::logits_grad(logits, b.grad));
    RealImage<T> g_mag(H, W);
    std::copy_n(g_in.ch(0, 0), g_mag.size(), g_mag.vec().begin());
    last.backward(g_mag, tr.sens, grads.k_central[steps - 1].frame(0), &grads.sens);
  }

  st.gen.params().zero_grad();
  st.gen.backward(tr, grads);
  clip_grad_norm(st.gen.params(), cfg.clip);
  adamw_step(st.gen.params(), cfg.optimizer(rate));

  st.history.push({rec.fidelity, rec.ear, rec.sda});
  if (!cfg.fixed_weights) st.weights = cov_update_weights(st.history, st.weights, cfg.active_losses());
  rec.weights = st.weights;
  ++st.iteration;
  return rec;
}

// Runs iterations until st.iteration reaches `until` (clamped to the
// configured total).
template <class T>
void train(TrainState<T>& st, const Dataset& ds, long long until,
           const std::function<void(const LossRecord&)>& on_record = {}) {
  until = std::min(until, total_iterations(ds, st.config));
  while (st.iteration < until) {
    const auto s = draw_sample(ds, st.config, st.iteration);
    const auto item = make_item<T>(ds.records[s.record], s.center, s.mask, st.config.gen.adjacent);
    const double rate = lr_schedule(s.epoch, st.config.lr, st.config.lr_step, st.config.lr_gamma);
    auto rec = train_iteration(st, item, rate);
    rec.epoch = s.epoch;
    if (on_record) on_record(rec);
  }
}

inline std::string loss_csv_header() { return "step,L_Fid,L_EAR,L_SDA,L_GAN,lambda1,lambda2,lambda3\n"; }

inline std::string loss_csv_line(const LossRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.fidelity, r.ear,
                r.sda, r.gan, r.weights.lambda1, r.weights.lambda2, r.weights.lambda3);
  return buf;
}

// ---------------------------------------------------------------------------
// Evaluation.

struct EvalSpec {
  std::vector<int> domains;
  std::vector<Trajectory> trajectories{Trajectory::Uniform, Trajectory::Gaussian, Trajectory::Radial};
  std::vector<int> accelerations{8};
  int max_samples = -1;  // per domain; -1: all
  std::uint64_t seed = 20251;
};

struct MetricSummary {
  double mean = 0;
  double std = 0;  // population
};

inline MetricSummary summarize(const std::vector<double>& v) {
  MetricSummary s;
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (!std::isfinite(s.mean)) return s;
  double acc = 0;
  for (double x : v) acc += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(acc / static_cast<double>(v.size()));
  return s;
}

struct MetricRow {
  int domain = 0;
  Trajectory trajectory = Trajectory::Uniform;
  int accel = 1;
  int samples = 0;
  MetricSummary ssim, psnr, nmse;
  MetricSummary zf_ssim, zf_psnr, zf_nmse;
};

struct ImageTriple {
  RealImage<double> zero_filled, reconstruction, ground_truth;
};

// Evaluation combines every image with the simulation's own coil maps, so
// the zero-filled baseline and the reference do not depend on the model.
template <class T>
SensitivityMaps<T> reference_maps(const SequenceRecord& r) {
  return make_sensitivities(rss_normalize(cast_volume<T>(r.sens_truth)));
}

// Central-frame magnitudes of the zero-filled, reconstructed and fully
// sampled k-space.
template <class T>
ImageTriple reconstruct_item(const Generator<T>& gen, const TrainItem<T>& item, const SensitivityMaps<T>& maps) {
  const auto tr = gen.forward(item.k0, item.mask);
  const int cf = tr.central();
  auto magnitude = [&](const KSpaceVolume<T>& k) {
    const auto m = MagnitudeCombine<T>::forward(k, cf, maps).magnitude;
    RealImage<double> out(m.height(), m.width());
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i];
    return out;
  };
  return {magnitude(item.k0), magnitude(tr.k.back()), magnitude(item.kG)};
}

// Deterministic mask for evaluating one record.
inline SamplingMask eval_mask(const SequenceRecord& r, Trajectory traj, int accel, int acs_lines, std::uint64_t seed) {
  const std::uint64_t stream = ((static_cast<std::uint64_t>(r.domain) * 4 + static_cast<std::uint64_t>(traj)) * 1024 +
                                static_cast<std::uint64_t>(accel)) *
                                   1000003ULL +
                               static_cast<std::uint64_t>(r.index);
  Rng rng = Rng(seed).split(stream);
  return make_mask(traj, r.kspace.height(), r.kspace.width(), r.frames(), accel, acs_lines, rng);
}

template <class T>
std::vector<MetricRow> evaluate(const Generator<T>& gen, const Dataset& ds, const EvalSpec& spec, int workers = 1) {
  require(!ds.records.empty(), "empty_dataset", "evaluation dataset is empty");
  std::vector<int> domains = spec.domains.empty() ? ds.domain_ids() : spec.domains;
  std::vector<MetricRow> rows;
  for (int d : domains) {
    auto ids = ds.of_domain(d);
    require(!ids.empty(), "empty_dataset", "no records for domain " + std::to_string(d));
    if (spec.max_samples >= 0 && static_cast<int>(ids.size()) > spec.max_samples) ids.resize(spec.max_samples);
    for (Trajectory traj : spec.trajectories)
      for (int accel : spec.accelerations) {
        const std::size_t n = ids.size();
        std::vector<double> ss(n), ps(n), nm(n), zs(n), zp(n), zn(n);
        parallel_for(n, workers, [&](std::size_t j) {
          const auto& r = ds.records[ids[j]];
          const auto mask = eval_mask(r, traj, accel, gen.config().acs_lines, spec.seed);
          const auto item = make_item<T>(r, r.eval_center(), mask, gen.config().adjacent);
          const auto im = reconstruct_item(gen, item, reference_maps<T>(r));
          const double range = detail::max_value(im.ground_truth);
          ss[j] = ssim(im.reconstruction, im.ground_truth, range);
          ps[j] = psnr(im.reconstruction, im.ground_truth);
          nm[j] = nmse(im.reconstruction, im.ground_truth);
          zs[j] = ssim(im.zero_filled, im.ground_truth, range);
          zp[j] = psnr(im.zero_filled, im.ground_truth);
          zn[j] = nmse(im.zero_filled, im.ground_truth);
        });
        MetricRow row;
        row.domain = d;
        row.trajectory = traj;
        row.accel = accel;
        row.samples = static_cast<int>(n);
        row.ssim = summarize(ss);
        row.psnr = summarize(ps);
        row.nmse = summarize(nm);
        row.zf_ssim = summarize(zs);
        row.zf_psnr = summarize(zp);
        row.zf_nmse = summarize(zn);
        rows.push_back(row);
      }
  }
  return rows;
}

inline std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out =
      "domain,trajectory,accel,samples,ssim_mean,ssim_std,psnr_mean,psnr_std,nmse_mean,nmse_std,"
      "zf_ssim_mean,zf_ssim_std,zf_psnr_mean,zf_psnr_std,zf_nmse_mean,zf_nmse_std\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%s,%d,%d,%.6f,%.6f,%.4f,%.4f,%.6f,%.6f,%.6f,%.6f,%.4f,%.4f,%.6f,%.6f\n",
                  r.domain, to_string(r.trajectory).c_str(), r.accel, r.samples, r.ssim.mean, r.ssim.std, r.psnr.mean,
                  r.psnr.std, r.nmse.mean, r.nmse.std, r.zf_ssim.mean, r.zf_ssim.std, r.zf_psnr.mean, r.zf_psnr.std,
                  r.zf_nmse.mean, r.zf_nmse.std);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints.

namespace detail {

template <class T>
GcmrTensor real_tensor(std::vector<std::uint32_t> dims, const std::vector<T>& v) {
  if constexpr (std::is_same_v<T, float>)
    return make_f32(std::move(dims), v);
  else
    return make_f64(std::move(dims), v);
}

template <class T>
std::vector<T> real_values(const GcmrTensor& t, const std::string& name) {
  if constexpr (std::is_same_v<T, float>) {
    require(t.dtype == DType::F32, "precision_mismatch", "entry '" + name + "' is not single precision");
    return as_f32(t);
  } else {
    require(t.dtype == DType::F64, "precision_mismatch", "entry '" + name + "' is not double precision");
    return as_f64(t);
  }
}

template <class T>
void put_params(Archive& a, const std::string& prefix, const ParamSet<T>& ps) {
  for (const auto& p : ps.params) {
    const auto& v = p.value;
    std::vector<std::uint32_t> dims = {static_cast<std::uint32_t>(v.n), static_cast<std::uint32_t>(v.c),
                                       static_cast<std::uint32_t>(v.h), static_cast<std::uint32_t>(v.w)};
    a.put(prefix + "/" + p.name + "/value", real_tensor<T>(dims, v.data));
    a.put(prefix + "/" + p.name + "/m", real_tensor<T>(dims, p.m));
    a.put(prefix + "/" + p.name + "/v", real_tensor<T>(dims, p.v));
  }
  a.put_u64(prefix + "/step", static_cast<std::uint64_t>(ps.step));
}

template <class T>
void get_params(const Archive& a, const std::string& prefix, ParamSet<T>& ps) {
  for (auto& p : ps.params) {
    auto load = [&](const std::string& what, std::vector<T>& dst) {
      const std::string name = prefix + "/" + p.name + "/" + what;
      auto v = real_values<T>(a.get(name), name);
      require(v.size() == dst.size(), "shape_mismatch", "entry '" + name + "' has the wrong size");
      dst = std::move(v);
    };
    load("value", p.value.data);
    load("m", p.m);
    load("v", p.v);
  }
  ps.step = static_cast<long long>(a.get_u64(prefix + "/step"));
}

inline std::vector<double> config_numbers(const TrainConfig& c) {
  return {static_cast<double>(c.epochs),       static_cast<double>(c.batch),
          c.lr,                                c.weight_decay,
          c.clip,                              static_cast<double>(c.lr_step),
          c.lr_gamma,                          static_cast<double>(c.cov_window),
          static_cast<double>(c.sda_window),   static_cast<double>(c.domains),
          static_cast<double>(c.use_ear),      static_cast<double>(c.use_sda),
          static_cast<double>(c.adversarial),  static_cast<double>(c.fixed_weights),
          static_cast<double>(c.ear.mode),     c.ear.value,
          static_cast<double>(c.disc_channels), static_cast<double>(c.max_iterations),
          static_cast<double>(c.gen.unrolls),  static_cast<double>(c.gen.base_channels),
          static_cast<double>(c.gen.prompt_channels), static_cast<double>(c.gen.adjacent),
          static_cast<double>(c.gen.acs_lines), static_cast<double>(c.gen.residual),
          static_cast<double>(c.gen.sme_refiner), c.gen.slope};
}

inline TrainConfig config_from_numbers(const std::vector<double>& v) {
  require(v.size() == 26, "bad_format", "checkpoint config has " + std::to_string(v.size()) + " values");
  TrainConfig c;
  std::size_t i = 0;
  auto I = [&] { return static_cast<int>(v[i++]); };
  auto B = [&] { return v[i++] != 0.0; };
  auto D = [&] { return v[i++]; };
  c.epochs = I();
  c.batch = I();
  c.lr = D();
  c.weight_decay = D();
  c.clip = D();
  c.lr_step = I();
  c.lr_gamma = D();
  c.cov_window = I();
  c.sda_window = I();
  c.domains = I();
  c.use_ear = B();
  c.use_sda = B();
  c.adversarial = B();
  c.fixed_weights = B();
  c.ear.mode = static_cast<EarThreshold::Mode>(I());
  c.ear.value = D();
  c.disc_channels = I();
  c.max_iterations = static_cast<long long>(D());
  c.gen.unrolls = I();
  c.gen.base_channels = I();
  c.gen.prompt_channels = I();
  c.gen.adjacent = I();
  c.gen.acs_lines = I();
  c.gen.residual = B();
  c.gen.sme_refiner = B();
  c.gen.slope = D();
  return c;
}

}  // namespace detail

template <class T>
Archive to_archive(const TrainState<T>& st) {
  Archive a;
  const auto& c = st.config;
  const double precision = sizeof(T) * 8;
  a.put_f64("precision", std::span(&precision, 1));
  a.put_f64("config/numbers", detail::config_numbers(c));
  a.put_u64("config/seed", c.seed);
  std::vector<double> acc(c.accelerations.begin(), c.accelerations.end());
  a.put_f64("config/accelerations", acc);
  std::vector<double> traj;
  for (auto t : c.trajectories) traj.push_back(static_cast<double>(t));
  a.put_f64("config/trajectories", traj);
  a.put_f64("config/initial_weights", c.initial_weights.values());
  detail::put_params(a, "gen", st.gen.params());
  detail::put_params(a, "disc", st.disc.params());
  a.put_f64("lambda", st.weights.values());
  for (int i = 0; i < 3; ++i) {
    std::vector<double> s(st.history.series[i].begin(), st.history.series[i].end());
    a.put_f64("cov/" + std::to_string(i), s);
  }
  std::vector<double> newest;
  for (int l = 0; l < st.bank.layers(); ++l) {
    newest.push_back(st.bank.newest_domain(l));
    for (int d = 0; d < st.bank.domains(); ++d) {
      const auto& q = st.bank.at(l, d);
      std::vector<double> flat;
      for (const auto& z : q) flat.insert(flat.end(), z.begin(), z.end());
      const auto dim = q.empty() ? 0u : static_cast<std::uint32_t>(q.front().size());
      a.put("bank/" + std::to_string(l) + "/" + std::to_string(d),
            make_f64({static_cast<std::uint32_t>(q.size()), dim}, flat));
    }
  }
  a.put_f64("bank/newest", newest);
  a.put_u64("iteration", static_cast<std::uint64_t>(st.iteration));
  return a;
}

inline TrainConfig config_from_archive(const Archive& a) {
  TrainConfig c = detail::config_from_numbers(a.get_f64("config/numbers"));
  c.seed = a.get_u64("config/seed");
  c.accelerations.clear();
  for (double v : a.get_f64("config/accelerations")) c.accelerations.push_back(static_cast<int>(v));
  c.trajectories.clear();
  for (double v : a.get_f64("config/trajectories")) {
    require(v >= 0 && v <= 2, "bad_format", "unknown trajectory id in checkpoint");
    c.trajectories.push_back(static_cast<Trajectory>(static_cast<int>(v)));
  }
  const auto w = a.get_f64("config/initial_weights");
  require(w.size() == 3, "bad_format", "bad initial weights entry");
  c.initial_weights = {w[0], w[1], w[2]};
  return c;
}

template <class T>
TrainState<T> from_archive(const Archive& a) {
  const auto prec = a.get_f64("precision");
  require(prec.size() == 1 && prec[0] == sizeof(T) * 8, "precision_mismatch",
          "checkpoint precision does not match the requested model type");
  auto st = TrainState<T>::create(config_from_archive(a));
  detail::get_params(a, "gen", st.gen.params());
  detail::get_params(a, "disc", st.disc.params());
  const auto w = a.get_f64("lambda");
  require(w.size() == 3, "bad_format", "bad lambda entry");
  st.weights = {w[0], w[1], w[2]};
  for (int i = 0; i < 3; ++i) {
    const auto s = a.get_f64("cov/" + std::to_string(i));
    st.history.series[i].assign(s.begin(), s.end());
  }
  const auto newest = a.get_f64("bank/newest");
  require(static_cast<int>(newest.size()) == st.bank.layers(), "bad_format", "bank layer count mismatch");
  for (int l = 0; l < st.bank.layers(); ++l) {
    for (int d = 0; d < st.bank.domains(); ++d) {
      const auto& t = a.get("bank/" + std::to_string(l) + "/" + std::to_string(d));
      require(t.dims.size() == 2, "bad_format", "bank entry must be 2-D");
      const auto flat = as_f64(t);
      const std::size_t dim = t.dims[1];
      for (std::uint32_t k = 0; k < t.dims[0]; ++k)
        st.bank.update(l, d, std::vector<double>(flat.begin() + k * dim, flat.begin() + (k + 1) * dim));
    }
    st.bank.set_newest(l, static_cast<int>(newest[l]));
  }
  st.iteration = static_cast<long long>(a.get_u64("iteration"));
  return st;
}

template <class T>
void save_checkpoint(const std::filesystem::path& p, const TrainState<T>& st) {
  to_archive(st).save(p);
}

template <class T>
TrainState<T> load_checkpoint(const std::filesystem::path& p) {
  return from_archive<T>(Archive::load(p));
}

}  // namespace genre
