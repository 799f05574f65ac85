#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "genre/dataset.hpp"
#include "genre/trainer.hpp"

namespace {

using genre::LossHistory;
using genre::LossWeights;
using genre::TrainConfig;
using genre::TrainState;

LossHistory history_with_cov(std::array<double, 3> cv) {
  // {1 - c, 1 + c} has mean 1 and population std c.
  LossHistory h;
  for (int k = 0; k < 2; ++k) {
    std::array<double, 3> v{};
    for (int i = 0; i < 3; ++i) v[i] = 1.0 + (k == 0 ? -cv[i] : cv[i]);
    h.push(v);
  }
  return h;
}

TEST(CovWeights, ProportionalToVariation) {
  const auto w = genre::cov_update_weights(history_with_cov({0.2, 0.1, 0.1}), {});
  EXPECT_NEAR(w.lambda1, 1.5, 1e-12);
  EXPECT_NEAR(w.lambda2, 0.75, 1e-12);
  EXPECT_NEAR(w.lambda3, 0.75, 1e-12);
}

TEST(CovWeights, ConstantHistoriesFallBackToUniform) {
  LossHistory h;
  for (int i = 0; i < 10; ++i) h.push({0.5, 0.5, 0.5});
  const auto w = genre::cov_update_weights(h, {2.0, 0.5, 0.5});
  EXPECT_EQ(w, (LossWeights{1.0, 1.0, 1.0}));
}

TEST(CovWeights, ShortHistoryKeepsCurrent) {
  LossHistory h;
  h.push({1, 2, 3});
  const LossWeights cur{2.0, 0.5, 0.5};
  EXPECT_EQ(genre::cov_update_weights(h, cur), cur);
}

TEST(CovWeights, FloorIsEnforced) {
  const auto w = genre::cov_update_weights(history_with_cov({0.5, 1e-6, 2e-6}), {});
  EXPECT_NEAR(w.lambda2, 0.01, 1e-15);
  EXPECT_NEAR(w.lambda3, 0.01, 1e-15);
  EXPECT_NEAR(w.lambda1, 2.98, 1e-12);
}

TEST(CovWeights, RandomHistoriesPositiveAndSumToThree) {
  genre::Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    LossHistory h;
    h.window = 2 + static_cast<int>(rng.below(60));
    const int n = 2 + static_cast<int>(rng.below(80));
    const double scale[3] = {rng.uniform(0, 5), std::pow(10.0, rng.uniform(-6, 3)), rng.uniform(0, 1e4)};
    for (int k = 0; k < n; ++k)
      h.push({scale[0] * rng.uniform(), scale[1] * rng.uniform(), trial % 7 == 0 ? 0.0 : scale[2] * rng.uniform()});
    const auto w = genre::cov_update_weights(h, {});
    EXPECT_NEAR(w.sum(), 3.0, 1e-12);
    for (double v : w.values()) EXPECT_GE(v, 0.01 - 1e-15);
  }
}

TEST(CovWeights, InactiveLossGetsZero) {
  const auto w = genre::cov_update_weights(history_with_cov({0.2, 0.3, 0.1}), {}, {true, false, true});
  EXPECT_EQ(w.lambda2, 0.0);
  EXPECT_NEAR(w.lambda1, 2.0, 1e-12);
  EXPECT_NEAR(w.lambda3, 1.0, 1e-12);
}

TEST(Curriculum, EqualPhases) {
  const std::vector<int> acc{8, 16, 24};
  EXPECT_EQ(genre::curriculum_schedule(0, 20, acc), std::vector<int>{8});
  EXPECT_EQ(genre::curriculum_schedule(19, 20, acc), acc);
  EXPECT_EQ(genre::curriculum_schedule(7, 20, acc), (std::vector<int>{8, 16}));
  std::size_t prev = 0;
  for (int e = 0; e < 20; ++e) {
    const auto s = genre::curriculum_schedule(e, 20, acc);
    EXPECT_GE(s.size(), prev);
    prev = s.size();
  }
  EXPECT_EQ(genre::curriculum_schedule(5, 10, {4, 8}), (std::vector<int>{4, 8}));
  EXPECT_THROW(genre::curriculum_schedule(20, 20, acc), genre::Error);
}

genre::DatasetConfig tiny_data_config() {
  genre::DatasetConfig c;
  c.height = c.width = 32;
  c.frames = 6;
  c.coils = 2;
  c.domains = 2;
  c.samples_per_domain = 3;
  c.unseen_samples = 2;
  c.acs_lines = 8;
  c.seed = 5;
  return c;
}

const genre::Dataset& tiny_dataset() {
  static const genre::Dataset ds = genre::generate_dataset(tiny_data_config());
  return ds;
}

TrainConfig tiny_train_config() {
  TrainConfig c;
  c.epochs = 2;
  c.accelerations = {4, 8};
  c.domains = 2;
  c.seed = 3;
  c.gen.unrolls = 2;
  c.gen.base_channels = 4;
  c.gen.prompt_channels = 2;
  c.gen.acs_lines = 8;
  c.disc_channels = 4;
  return c;
}

TEST(Dataset, RecordsPerDomain) {
  const auto& ds = tiny_dataset();
  EXPECT_EQ(ds.records.size(), 8u);
  EXPECT_EQ(ds.of_domain(0).size(), 3u);
  EXPECT_EQ(ds.of_domain(genre::kUnseenDomain).size(), 2u);
  EXPECT_EQ(ds.domain_ids(), (std::vector<int>{0, 1, genre::kUnseenDomain}));
}

TEST(Dataset, GenerationIndependentOfWorkerCount) {
  const auto a = genre::generate_dataset(tiny_data_config(), 1);
  const auto b = genre::generate_dataset(tiny_data_config(), 3);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].kspace.vec(), b.records[i].kspace.vec());
    EXPECT_EQ(a.records[i].mask, b.records[i].mask);
  }
}

TEST(SampleOrder, EpochIsPermutationInterleavingDomains) {
  const auto& ds = tiny_dataset();
  const auto order = genre::epoch_order(ds, 2, 9, 0);
  ASSERT_EQ(order.size(), 6u);
  EXPECT_EQ(std::set<std::size_t>(order.begin(), order.end()).size(), 6u);
  for (std::size_t k = 0; k < order.size(); ++k) EXPECT_EQ(ds.records[order[k]].domain, static_cast<int>(k % 2));
  EXPECT_EQ(order, genre::epoch_order(ds, 2, 9, 0));
}

TEST(SampleOrder, DrawUsesCurriculum) {
  const auto& ds = tiny_dataset();
  auto cfg = tiny_train_config();
  for (long long it = 0; it < 6; ++it) EXPECT_EQ(genre::draw_sample(ds, cfg, it).accel, 4);
  std::set<int> late;
  for (long long it = 6; it < 12; ++it) late.insert(genre::draw_sample(ds, cfg, it).accel);
  for (int a : late) EXPECT_TRUE(a == 4 || a == 8);
}

TEST(TrainIteration, DiscriminatorUpdatedOncePerStep) {
  const auto& ds = tiny_dataset();
  auto st = TrainState<double>::create(tiny_train_config());
  genre::train(st, ds, 2);
  EXPECT_EQ(st.disc.params().step, 2 * st.config.gen.unrolls);
  EXPECT_EQ(st.gen.params().step, 2);
  EXPECT_EQ(st.iteration, 2);
}

TEST(TrainIteration, FidelityOnlyMatchesStrippedPipeline) {
  const auto& ds = tiny_dataset();
  auto cfg = tiny_train_config();
  cfg.use_ear = cfg.use_sda = cfg.adversarial = false;
  cfg.fixed_weights = true;
  cfg.initial_weights = {1.0, 0.0, 0.0};
  auto st = TrainState<double>::create(cfg);
  for (long long it = 0; it < 3; ++it) {
    const auto s = genre::draw_sample(ds, cfg, it);
    const auto item = genre::make_item<double>(ds.records[s.record], s.center, s.mask, cfg.gen.adjacent);
    // Reference: plain forward pass and the standalone fidelity loss.
    const auto tr = st.gen.forward(item.k0, item.mask);
    const int cf = tr.central();
    const auto gt = genre::MagnitudeCombine<double>::forward(item.kG, cf, tr.sens).magnitude;
    const double range = *std::max_element(gt.vec().begin(), gt.vec().end());
    double expected = 0;
    for (int t = 0; t < tr.unrolls(); ++t)
      expected += genre::fidelity_loss(tr.k[t + 1], cf, item.kG, cf, tr.sens, range).total();
    const auto rec = genre::train_iteration(st, item, cfg.lr);
    EXPECT_NEAR(rec.fidelity, expected, 1e-12 * std::max(1.0, expected));
    EXPECT_EQ(rec.ear, 0.0);
    EXPECT_EQ(rec.sda, 0.0);
    EXPECT_EQ(rec.gan, 0.0);
    EXPECT_EQ(rec.weights, (LossWeights{1.0, 0.0, 0.0}));
  }
  EXPECT_EQ(st.disc.params().step, 0);
}

TEST(TrainIteration, WeightsStayValidAndLossesFinite) {
  const auto& ds = tiny_dataset();
  auto cfg = tiny_train_config();
  auto st = TrainState<float>::create(cfg);
  int records = 0;
  genre::train(st, ds, 12, [&](const genre::LossRecord& r) {
    ++records;
    EXPECT_NEAR(r.weights.sum(), 3.0, 1e-12);
    for (double w : r.weights.values()) EXPECT_GE(w, 0.01 - 1e-15);
    EXPECT_TRUE(std::isfinite(r.fidelity) && std::isfinite(r.ear) && std::isfinite(r.sda) && std::isfinite(r.gan));
  });
  EXPECT_EQ(records, 12);
  // Banks are bounded by the window.
  for (int l = 0; l < st.bank.layers(); ++l)
    for (int d = 0; d < st.bank.domains(); ++d) EXPECT_LE(st.bank.at(l, d).size(), 4u);
}

TEST(TrainIteration, NonFiniteLossAborts) {
  const auto& ds = tiny_dataset();
  auto st = TrainState<double>::create(tiny_train_config());
  st.gen.params()[st.gen.eta_index(0)].data[0] = std::nan("");
  try {
    genre::train(st, ds, 1);
    FAIL() << "expected non_finite";
  } catch (const genre::Error& e) {
    EXPECT_EQ(e.code(), "non_finite");
  }
}

std::vector<std::uint8_t> run_bytes(const TrainConfig& cfg, long long iters, std::string* csv) {
  auto st = TrainState<float>::create(cfg);
  genre::train(st, tiny_dataset(), iters, [&](const genre::LossRecord& r) { *csv += genre::loss_csv_line(r); });
  return genre::to_archive(st).encode();
}

TEST(Determinism, IdenticalRunsAreBitwiseEqual) {
  std::string a, b;
  const auto ca = run_bytes(tiny_train_config(), 5, &a);
  const auto cb = run_bytes(tiny_train_config(), 5, &b);
  EXPECT_EQ(a, b);
  EXPECT_EQ(ca, cb);
  auto other = tiny_train_config();
  other.seed = 4;
  std::string c;
  EXPECT_NE(run_bytes(other, 5, &c), ca);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto st = TrainState<float>::create(tiny_train_config());
  genre::train(st, tiny_dataset(), 4);
  const auto bytes = genre::to_archive(st).encode();
  const auto back = genre::from_archive<float>(genre::Archive::decode(bytes));
  EXPECT_EQ(genre::to_archive(back).encode(), bytes);
  EXPECT_EQ(back.bank, st.bank);
  EXPECT_EQ(back.history, st.history);
  EXPECT_EQ(back.weights, st.weights);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  auto st = TrainState<float>::create(tiny_train_config());
  auto bytes = genre::to_archive(st).encode();
  auto code_of = [](const std::vector<std::uint8_t>& b) {
    try {
      genre::Archive::decode(b);
    } catch (const genre::Error& e) {
      return e.code();
    }
    return std::string("ok");
  };
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(code_of(bad), "bad_magic");
  bad = bytes;
  bad[5] = 9;
  EXPECT_EQ(code_of(bad), "version_mismatch");
  bad.assign(bytes.begin(), bytes.end() - 17);
  EXPECT_EQ(code_of(bad), "truncated");
  EXPECT_THROW(genre::from_archive<double>(genre::Archive::decode(bytes)), genre::Error);
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  const auto cfg = tiny_train_config();
  const auto dir = std::filesystem::temp_directory_path() / "genre_resume_test";
  std::filesystem::create_directories(dir);
  std::string full_csv;
  auto full = TrainState<float>::create(cfg);
  genre::train(full, tiny_dataset(), 7, [&](const genre::LossRecord& r) { full_csv += genre::loss_csv_line(r); });

  std::string csv;
  auto part = TrainState<float>::create(cfg);
  genre::train(part, tiny_dataset(), 4, [&](const genre::LossRecord& r) { csv += genre::loss_csv_line(r); });
  genre::save_checkpoint(dir / "ck.gckp", part);
  auto resumed = genre::load_checkpoint<float>(dir / "ck.gckp");
  genre::train(resumed, tiny_dataset(), 7, [&](const genre::LossRecord& r) { csv += genre::loss_csv_line(r); });
  EXPECT_EQ(csv, full_csv);
  EXPECT_EQ(genre::to_archive(resumed).encode(), genre::to_archive(full).encode());
  std::filesystem::remove_all(dir);
}

TEST(Evaluate, TableShapeAndRanges) {
  const auto& ds = tiny_dataset();
  auto st = TrainState<double>::create(tiny_train_config());
  genre::EvalSpec spec;
  spec.accelerations = {1, 4};
  const auto rows = genre::evaluate(st.gen, ds, spec);
  EXPECT_EQ(rows.size(), 3u * 3u * 2u);
  for (const auto& r : rows) {
    EXPECT_GE(r.ssim.mean, -1.0);
    EXPECT_LE(r.ssim.mean, 1.0);
    EXPECT_GE(r.zf_ssim.mean, -1.0);
    EXPECT_LE(r.zf_ssim.mean, 1.0);
    if (r.accel == 1) {
      EXPECT_EQ(r.zf_nmse.mean, 0.0);
      EXPECT_NEAR(r.zf_ssim.mean, 1.0, 1e-12);
    }
  }
  const auto again = genre::evaluate(st.gen, ds, spec, 3);
  ASSERT_EQ(again.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(again[i].ssim.mean, rows[i].ssim.mean);
  EXPECT_EQ(genre::metrics_csv(rows), genre::metrics_csv(again));
}

TEST(Evaluate, EmptyDatasetFails) {
  auto st = TrainState<double>::create(tiny_train_config());
  EXPECT_THROW(genre::evaluate(st.gen, genre::Dataset{}, genre::EvalSpec{}), genre::Error);
}

}  // namespace
