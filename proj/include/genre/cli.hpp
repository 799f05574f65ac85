#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "error.hpp"
#include "gcmr.hpp"
#include "trainer.hpp"

namespace genre::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Helpers shared by the commands.

inline std::vector<Trajectory> parse_trajectories(const std::vector<std::string>& names) {
  std::vector<Trajectory> out;
  for (const auto& n : names) out.push_back(parse_trajectory(n));
  require(!out.empty(), "invalid_argument", "no trajectories given");
  return out;
}

inline void write_text(const fs::path& p, const std::string& text) {
  write_file(p, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::string read_text(const fs::path& p) {
  const auto b = read_file(p);
  return {b.begin(), b.end()};
}

// Training variants compared by the ablation runner.
inline const std::vector<std::string>& known_variants() {
  static const std::vector<std::string> v = {"full", "no-ear", "no-sda", "no-residual"};
  return v;
}

inline TrainConfig apply_variant(TrainConfig cfg, const std::string& variant) {
  if (variant == "full") return cfg;
  if (variant == "no-ear") {
    cfg.use_ear = false;
  } else if (variant == "no-sda") {
    cfg.use_sda = false;
  } else if (variant == "no-residual") {
    cfg.gen.residual = false;
  } else {
    throw Error("unknown_variant", "unknown variant '" + variant + "' (expected full, no-ear, no-sda, no-residual)");
  }
  return cfg;
}

struct TrainRunOptions {
  fs::path out;             // empty: no files written
  bool epoch_checkpoints = true;
  std::ostream* log = nullptr;
  int log_every = 100;
};

inline void log_record(const TrainRunOptions& o, const LossRecord& r) {
  if (!o.log || o.log_every <= 0 || r.step % o.log_every != 0) return;
  char buf[256];
  std::snprintf(buf, sizeof buf, "step %lld epoch %d  L_Fid %.4f L_EAR %.4f L_SDA %.4g L_GAN %.4f  lambda %.3f %.3f %.3f\n",
                r.step, r.epoch, r.fidelity, r.ear, r.sda, r.gan, r.weights.lambda1, r.weights.lambda2,
                r.weights.lambda3);
  *o.log << buf << std::flush;
}

// Trains to completion, writing losses.csv, per-epoch checkpoints and
// latest.gckp under opts.out. A non-finite loss leaves nan_snapshot.gckp
// next to them before the error propagates.
template <class T>
void run_training(TrainState<T>& st, const Dataset& ds, const TrainRunOptions& opts) {
  const long long total = total_iterations(ds, st.config);
  const long long per_epoch = static_cast<long long>(training_records(ds, st.config.domains).size());
  std::ofstream csv;
  if (!opts.out.empty()) {
    fs::create_directories(opts.out);
    const fs::path path = opts.out / "losses.csv";
    // On resume keep only rows from before the checkpoint.
    std::string kept = loss_csv_header();
    if (st.iteration > 0 && fs::exists(path)) {
      std::istringstream in(read_text(path));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line))
        if (!line.empty() && std::stoll(line.substr(0, line.find(','))) < st.iteration) kept += line + "\n";
    }
    write_text(path, kept);
    csv.open(path, std::ios::app);
  }
  while (st.iteration < total) {
    const long long until = std::min(total, (st.iteration / per_epoch + 1) * per_epoch);
    try {
      train(st, ds, until, [&](const LossRecord& r) {
        if (csv.is_open()) csv << loss_csv_line(r) << std::flush;
        log_record(opts, r);
      });
    } catch (const Error& e) {
      if (e.code() == "non_finite" && !opts.out.empty()) save_checkpoint(opts.out / "nan_snapshot.gckp", st);
      throw;
    }
    if (!opts.out.empty()) {
      if (opts.epoch_checkpoints) {
        char name[64];
        std::snprintf(name, sizeof name, "epoch_%03lld.gckp", (st.iteration + per_epoch - 1) / per_epoch);
        save_checkpoint(opts.out / name, st);
      }
      save_checkpoint(opts.out / "latest.gckp", st);
    }
  }
}

inline Dataset split_of(const Dataset& ds, const std::string& split, int train_domains) {
  require(split == "unseen" || split == "train", "invalid_argument", "split must be 'unseen' or 'train'");
  Dataset out;
  out.config = ds.config;
  for (const auto& r : ds.records)
    if (split == "unseen" ? r.domain == kUnseenDomain : r.domain < train_domains) out.records.push_back(r);
  require(!out.records.empty(), "empty_dataset", "dataset has no records for split '" + split + "'");
  return out;
}

// Mean over rows of the per-row means: one number per metric for a run.
struct RunSummary {
  double ssim = 0, psnr = 0, nmse = 0, zf_ssim = 0, zf_psnr = 0, zf_nmse = 0;
};

inline RunSummary summarize_rows(const std::vector<MetricRow>& rows) {
  RunSummary s;
  for (const auto& r : rows) {
    s.ssim += r.ssim.mean;
    s.psnr += r.psnr.mean;
    s.nmse += r.nmse.mean;
    s.zf_ssim += r.zf_ssim.mean;
    s.zf_psnr += r.zf_psnr.mean;
    s.zf_nmse += r.zf_nmse.mean;
  }
  const double n = static_cast<double>(std::max<std::size_t>(rows.size(), 1));
  s.ssim /= n;
  s.psnr /= n;
  s.nmse /= n;
  s.zf_ssim /= n;
  s.zf_psnr /= n;
  s.zf_nmse /= n;
  return s;
}

struct AblationRow {
  std::string variant;
  MetricSummary ssim, psnr, nmse;
};

// Variant rows (mean +- std over seeds) followed by the zero-filled row.
inline std::vector<AblationRow> ablation_table(const std::vector<std::string>& variants,
                                               const std::vector<std::vector<RunSummary>>& runs) {
  std::vector<AblationRow> rows;
  std::vector<double> zs, zp, zn;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    std::vector<double> s, p, n;
    for (const auto& r : runs[v]) {
      s.push_back(r.ssim);
      p.push_back(r.psnr);
      n.push_back(r.nmse);
      if (v == 0) {
        zs.push_back(r.zf_ssim);
        zp.push_back(r.zf_psnr);
        zn.push_back(r.zf_nmse);
      }
    }
    rows.push_back({variants[v], summarize(s), summarize(p), summarize(n)});
  }
  rows.push_back({"zero-filled", summarize(zs), summarize(zp), summarize(zn)});
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,ssim_mean,ssim_std,psnr_mean,psnr_std,nmse_mean,nmse_std\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.4f,%.4f,%.6f,%.6f\n", r.variant.c_str(), r.ssim.mean, r.ssim.std,
                  r.psnr.mean, r.psnr.std, r.nmse.mean, r.nmse.std);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report rendering.

inline std::vector<std::vector<double>> read_csv_numbers(const fs::path& p, std::size_t columns) {
  require(fs::exists(p), "missing_file", p.string() + " does not exist");
  std::istringstream in(read_text(p));
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    require(row.size() == columns, "bad_format", p.string() + ": expected " + std::to_string(columns) + " columns");
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void draw_line(RealImage<double>& img, int x0, int y0, int x1, int y1, double value) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    if (y0 >= 0 && y0 < img.height() && x0 >= 0 && x0 < img.width()) img(y0, x0) = value;
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

// Lambda trajectories as a grayscale chart: lambda1 black, lambda2 dark
// gray, lambda3 light gray, on a white background with axes; y spans [0, 3].
inline RealImage<double> lambda_chart(const std::vector<std::vector<double>>& rows, int width = 640, int height = 240) {
  RealImage<double> img(height, width);
  std::fill(img.vec().begin(), img.vec().end(), 1.0);
  const int left = 8, bottom = height - 8, top = 8, right = width - 8;
  draw_line(img, left, top, left, bottom, 0.0);
  draw_line(img, left, bottom, right, bottom, 0.0);
  if (rows.empty()) return img;
  const double s0 = rows.front()[0], s1 = std::max(rows.back()[0], s0 + 1);
  auto px = [&](double step) { return left + static_cast<int>(std::lround((step - s0) / (s1 - s0) * (right - left))); };
  auto py = [&](double lam) {
    return bottom - static_cast<int>(std::lround(std::clamp(lam / kWeightTotal, 0.0, 1.0) * (bottom - top)));
  };
  const double shade[3] = {0.0, 0.35, 0.7};
  for (int k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::size_t j = i == 0 ? 0 : i - 1;
      draw_line(img, px(rows[j][0]), py(rows[j][5 + k]), px(rows[i][0]), py(rows[i][5 + k]), shade[k]);
    }
  return img;
}

// zero-filled | reconstruction | ground truth | 5x error, all on [0, range].
inline RealImage<double> comparison_panel(const ImageTriple& im) {
  const int h = im.ground_truth.height(), w = im.ground_truth.width();
  const double range = detail::max_value(im.ground_truth);
  RealImage<double> panel(h, 4 * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      panel(y, x) = im.zero_filled(y, x);
      panel(y, w + x) = im.reconstruction(y, x);
      panel(y, 2 * w + x) = im.ground_truth(y, x);
      panel(y, 3 * w + x) = std::min(5.0 * std::abs(im.reconstruction(y, x) - im.ground_truth(y, x)), range);
    }
  return panel;
}

// ---------------------------------------------------------------------------
// Commands.

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline void add_config_option(CLI::App& app) {
  app.set_config("--config", "", "key = value file mirroring the flags (flags override the file)");
}

inline int cmd_gen_data(CLI::App& app, std::vector<std::string> args, Streams io) {
  DatasetConfig c;
  std::string out, traj = "uniform";
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--h", c.height, "image height")->capture_default_str();
  app.add_option("--w", c.width, "image width")->capture_default_str();
  app.add_option("--frames", c.frames, "frames per sequence")->capture_default_str();
  app.add_option("--coils", c.coils, "receiver coils")->capture_default_str();
  app.add_option("--domains", c.domains, "training domains (the held-out domain is added)")->capture_default_str();
  app.add_option("--samples-per-domain", c.samples_per_domain, "sequences per training domain")->capture_default_str();
  app.add_option("--unseen-samples", c.unseen_samples, "held-out sequences (-1: same as training domains)")
      ->capture_default_str();
  app.add_option("--seed", c.seed, "dataset seed")->capture_default_str();
  app.add_option("--accel", c.accel, "acceleration of the stored k0 mask")->capture_default_str();
  app.add_option("--trajectory", traj, "trajectory of the stored k0 mask")->capture_default_str();
  app.add_option("--acs", c.acs_lines, "ACS lines")->capture_default_str();
  add_config_option(app);
  app.parse(args);
  c.trajectory = parse_trajectory(traj);
  const auto ds = generate_dataset(c, worker_count());
  write_dataset(ds, out, worker_count());
  io.out << "wrote " << ds.records.size() << " sequences to " << out << "\n";
  return 0;
}

struct TrainFlags {
  int epochs = 20;
  int unrolls = 4;
  std::vector<int> accels{8, 16, 24};
  std::vector<std::string> trajectories{"uniform", "gaussian", "radial"};
  std::uint64_t seed = 1;
  double lr = 0.002;
  long long max_iterations = 0;
  int base_channels = 8;
  int acs_lines = 16;
  bool no_ear = false, no_sda = false, no_residual = false, no_adversarial = false;

  void add(CLI::App& app) {
    app.add_option("--epochs", epochs, "training epochs")->capture_default_str();
    app.add_option("--unrolls", unrolls, "unrolled steps (16 in the full-size setting)")->capture_default_str();
    app.add_option("--accel-set", accels, "accelerations, ascending (curriculum order)")->delimiter(',')
        ->capture_default_str();
    app.add_option("--trajectory", trajectories, "trajectories sampled during training")->delimiter(',')
        ->capture_default_str();
    app.add_option("--seed", seed, "training seed")->capture_default_str();
    app.add_option("--lr", lr, "AdamW learning rate")->capture_default_str();
    app.add_option("--max-iterations", max_iterations, "stop after this many iterations (0: all epochs)")
        ->capture_default_str();
    app.add_option("--channels", base_channels, "reconstructor base channels")->capture_default_str();
    app.add_option("--acs", acs_lines, "ACS lines used for sensitivity estimation")->capture_default_str();
    app.add_flag("--no-ear", no_ear, "drop the edge-aware region loss");
    app.add_flag("--no-sda", no_sda, "drop the distribution alignment loss");
    app.add_flag("--no-residual", no_residual, "disable residual feature passing");
    app.add_flag("--no-adversarial", no_adversarial, "drop the discriminator and adversarial term");
  }

  TrainConfig config(int domains) const {
    TrainConfig c;
    c.epochs = epochs;
    c.gen.unrolls = unrolls;
    c.accelerations = accels;
    c.trajectories = parse_trajectories(trajectories);
    c.seed = seed;
    c.lr = lr;
    c.max_iterations = max_iterations;
    c.gen.base_channels = base_channels;
    c.gen.acs_lines = acs_lines;
    c.domains = domains;
    c.use_ear = !no_ear;
    c.use_sda = !no_sda;
    c.gen.residual = !no_residual;
    c.adversarial = !no_adversarial;
    c.validate();
    return c;
  }
};

inline int cmd_train(CLI::App& app, std::vector<std::string> args, Streams io) {
  std::string data, out, resume;
  TrainFlags flags;
  app.add_option("--data", data, "dataset directory")->required();
  app.add_option("--out", out, "run directory")->required();
  app.add_option("--resume", resume, "checkpoint to continue from (its configuration is used)");
  flags.add(app);
  add_config_option(app);
  app.parse(args);
  const auto ds = read_dataset(data, worker_count());
  auto st = resume.empty() ? TrainState<float>::create(flags.config(ds.config.domains)) : load_checkpoint<float>(resume);
  fs::create_directories(out);
  write_text(fs::path(out) / "run.cfg", "data = " + fs::absolute(data).string() + "\n");
  TrainRunOptions opts;
  opts.out = out;
  opts.log = &io.out;
  run_training(st, ds, opts);
  EvalSpec spec;
  spec.accelerations = st.config.accelerations;
  spec.trajectories = st.config.trajectories;
  const auto rows = evaluate(st.gen, split_of(ds, "train", st.config.domains), spec, worker_count());
  write_text(fs::path(out) / "eval_train.csv", metrics_csv(rows));
  io.out << metrics_csv(rows);
  return 0;
}

inline int cmd_reconstruct(CLI::App& app, std::vector<std::string> args, Streams io) {
  std::string ckpt, input, mask_path, out;
  int frame = -1;
  bool sixteen = false;
  app.add_option("--ckpt", ckpt, "model checkpoint")->required();
  app.add_option("--input", input, "undersampled k-space (GCMR, frames x coils x h x w)")->required();
  app.add_option("--mask", mask_path, "sampling mask (GCMR, frames x h x w)")->required();
  app.add_option("--out", out, "output image path (.pgm; a .gcmr with the complex image is written alongside)")
      ->required();
  app.add_option("--frame", frame, "frame to reconstruct (default: middle frame)");
  app.add_flag("--16bit", sixteen, "write a 16-bit graymap");
  add_config_option(app);
  app.parse(args);
  const auto st = load_checkpoint<float>(ckpt);
  const auto k = tensor_volume<float>(load_gcmr(input));
  const auto mask = tensor_mask(load_gcmr(mask_path));
  require(mask.frames == k.frames() && mask.height == k.height() && mask.width == k.width(), "shape_mismatch",
          "mask is " + std::to_string(mask.frames) + "x" + shape_str(mask.height, mask.width) + ", k-space is " +
              std::to_string(k.frames()) + "x" + shape_str(k.height(), k.width()));
  if (frame < 0) frame = k.frames() / 2;
  require(frame < k.frames(), "invalid_argument", "frame out of range");
  const auto ids = adjacent_frames(frame, st.config.gen.adjacent, k.frames());
  KSpaceVolume<float> k0(static_cast<int>(ids.size()), k.coils(), k.height(), k.width());
  for (std::size_t a = 0; a < ids.size(); ++a) {
    auto src = k.frame(ids[a]);
    std::copy(src.begin(), src.end(), k0.frame(static_cast<int>(a)).begin());
  }
  const auto window = mask.window(ids);
  const auto tr = st.gen.forward(apply_mask(k0, window), window);
  RealImage<double> mag(k.height(), k.width());
  for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::abs(tr.final_image[i]);
  fs::path pgm = out;
  if (pgm.extension() != ".pgm") pgm += ".pgm";
  fs::path gcmr = pgm;
  gcmr.replace_extension(".gcmr");
  write_pgm(pgm, mag, 0.0, std::max(detail::max_value(mag), 1e-30), sixteen);
  save_gcmr(gcmr, make_c64<float>({1, 1, static_cast<std::uint32_t>(k.height()), static_cast<std::uint32_t>(k.width())},
                                  tr.final_image.vec()));
  io.out << "wrote " << pgm.string() << " and " << gcmr.string() << "\n";
  return 0;
}

inline int cmd_eval(CLI::App& app, std::vector<std::string> args, Streams io) {
  std::string ckpt, data, split = "unseen", report;
  std::vector<int> accels;
  std::vector<std::string> trajectories{"uniform", "gaussian", "radial"};
  int max_samples = -1;
  app.add_option("--ckpt", ckpt, "model checkpoint")->required();
  app.add_option("--data", data, "dataset directory")->required();
  app.add_option("--split", split, "unseen or train")->capture_default_str();
  app.add_option("--report", report, "metrics CSV to write");
  app.add_option("--accel-set", accels, "accelerations (default: the checkpoint's)")->delimiter(',');
  app.add_option("--trajectory", trajectories, "trajectories")->delimiter(',')->capture_default_str();
  app.add_option("--max-samples", max_samples, "per-domain sample cap (-1: all)")->capture_default_str();
  add_config_option(app);
  app.parse(args);
  const auto st = load_checkpoint<float>(ckpt);
  const auto ds = split_of(read_dataset(data, worker_count()), split, st.config.domains);
  EvalSpec spec;
  spec.accelerations = accels.empty() ? st.config.accelerations : accels;
  spec.trajectories = parse_trajectories(trajectories);
  spec.max_samples = max_samples;
  const auto csv = metrics_csv(evaluate(st.gen, ds, spec, worker_count()));
  if (!report.empty()) write_text(report, csv);
  io.out << csv;
  return 0;
}

inline int cmd_ablate(CLI::App& app, std::vector<std::string> args, Streams io) {
  std::string data, out = "ablation";
  std::vector<std::string> variants = known_variants();
  int seeds = 3;
  TrainFlags flags;
  app.add_option("--data", data, "dataset directory")->required();
  app.add_option("--out", out, "output directory")->capture_default_str();
  app.add_option("--variants", variants, "variants to train")->delimiter(',')->capture_default_str();
  app.add_option("--seeds", seeds, "seeds per variant (1..N)")->capture_default_str();
  flags.add(app);
  add_config_option(app);
  app.parse(args);
  for (const auto& v : variants) apply_variant(TrainConfig{}, v);
  require(seeds >= 1, "invalid_argument", "--seeds must be >= 1");
  const auto ds = read_dataset(data, worker_count());
  const auto unseen = split_of(ds, "unseen", ds.config.domains);
  std::vector<std::vector<RunSummary>> runs(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v)
    for (int s = 1; s <= seeds; ++s) {
      auto f = flags;
      f.seed = static_cast<std::uint64_t>(s);
      auto st = TrainState<float>::create(apply_variant(f.config(ds.config.domains), variants[v]));
      TrainRunOptions opts;
      opts.out = fs::path(out) / (variants[v] + "_seed" + std::to_string(s));
      opts.epoch_checkpoints = false;
      run_training(st, ds, opts);
      EvalSpec spec;
      spec.accelerations = st.config.accelerations;
      spec.trajectories = st.config.trajectories;
      const auto rows = evaluate(st.gen, unseen, spec, worker_count());
      write_text(opts.out / "eval_unseen.csv", metrics_csv(rows));
      runs[v].push_back(summarize_rows(rows));
      io.out << variants[v] << " seed " << s << ": unseen SSIM " << runs[v].back().ssim << "\n";
    }
  const auto csv = ablation_csv(ablation_table(variants, runs));
  write_text(fs::path(out) / "ablation.csv", csv);
  io.out << csv;
  return 0;
}

inline int cmd_report(CLI::App& app, std::vector<std::string> args, Streams io) {
  std::string run, out;
  app.add_option("--run", run, "run directory written by train")->required();
  app.add_option("--out", out, "report directory")->required();
  add_config_option(app);
  app.parse(args);
  const fs::path rd = run, od = out;
  const auto rows = read_csv_numbers(rd / "losses.csv", 8);
  require(!rows.empty(), "missing_file", (rd / "losses.csv").string() + " has no rows");
  fs::create_directories(od);
  write_text(od / "lambda.csv", read_text(rd / "losses.csv"));
  write_pgm(od / "lambda.pgm", lambda_chart(rows), 0.0, 1.0);

  require(fs::exists(rd / "latest.gckp"), "missing_file", (rd / "latest.gckp").string() + " does not exist");
  require(fs::exists(rd / "run.cfg"), "missing_file", (rd / "run.cfg").string() + " does not exist");
  const auto st = load_checkpoint<float>(rd / "latest.gckp");
  const auto kv = parse_key_values(read_text(rd / "run.cfg"), (rd / "run.cfg").string());
  require(kv.contains("data"), "bad_format", "run.cfg has no data entry");
  const auto ds = read_dataset(kv.at("data"));
  const auto unseen = ds.of_domain(kUnseenDomain);
  const auto& rec = ds.records[unseen.empty() ? 0 : unseen.front()];
  const int accel = st.config.accelerations.back();
  for (Trajectory t : {Trajectory::Uniform, Trajectory::Gaussian, Trajectory::Radial}) {
    const auto mask = eval_mask(rec, t, accel, st.config.gen.acs_lines, EvalSpec{}.seed);
    const auto im = reconstruct_item(st.gen, make_item<float>(rec, rec.eval_center(), mask, st.config.gen.adjacent),
                                     reference_maps<float>(rec));
    write_pgm(od / ("panel_" + to_string(t) + ".pgm"), comparison_panel(im), 0.0, detail::max_value(im.ground_truth));
  }
  io.out << "wrote report to " << od.string() << "\n";
  return 0;
}

// Entry point: returns the process exit code. Errors print a single line
// "error: <code>: <message>" on the error stream.
inline int run(const std::vector<std::string>& argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  const std::string usage =
      "usage: genre <gen-data|train|reconstruct|eval|ablate|report> [options]  (genre <command> --help)";
  if (argv.size() < 2) {
    err << "error: usage: missing command\n" << usage << "\n";
    return 2;
  }
  const std::string cmd = argv[1];
  if (cmd == "--help" || cmd == "-h") {
    out << usage << "\n";
    return 0;
  }
  using Handler = int (*)(CLI::App&, std::vector<std::string>, Streams);
  const std::vector<std::pair<std::string, Handler>> table = {
      {"gen-data", cmd_gen_data}, {"train", cmd_train},   {"reconstruct", cmd_reconstruct},
      {"eval", cmd_eval},         {"ablate", cmd_ablate}, {"report", cmd_report}};
  auto it = std::find_if(table.begin(), table.end(), [&](const auto& e) { return e.first == cmd; });
  if (it == table.end()) {
    err << "error: usage: unknown command '" << cmd << "'\n" << usage << "\n";
    return 2;
  }
  CLI::App app("genre " + cmd, "genre " + cmd);
  app.set_help_flag("--help", "print this help");  // frees -h / --h for the height option
  // CLI11 consumes arguments from the back.
  std::vector<std::string> rest(argv.rbegin(), argv.rend() - 2);
  try {
    return it->second(app, rest, {out, err});
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.code() << ": " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: io: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace genre::cli
