#include <gtest/gtest.h>

#include <cmath>

#include "genre/losses.hpp"
#include "genre/phantom.hpp"
#include "genre/unroll.hpp"
#include "test_support.hpp"

namespace {

using genre::CVolume;
using genre::Generator;
using genre::GeneratorConfig;
using genre::Rng;
using cd = std::complex<double>;

struct Problem {
  CVolume<double> kG, k0;
  genre::SamplingMask mask;
};

Problem make_problem(int n, int accel, int acs, std::uint64_t seed, int coils = 3) {
  Rng rng(seed);
  const auto seq = genre::make_dynamic_phantom(std::max(n, 32), std::max(n, 32), 5, 1, rng);
  // Downsample to n x n by taking every k-th pixel so small problems stay cheap.
  const int step = std::max(n, 32) / n;
  genre::PhantomSequence small;
  for (const auto& f : seq.frames) {
    genre::ComplexImage<double> img(n, n);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) img(y, x) = f(y * step, x * step);
    small.frames.push_back(img);
  }
  const auto mc = genre::simulate_coils(small, coils, rng);
  Problem p;
  p.mask = genre::uniform_kt_mask(n, n, 5, accel, acs, rng);
  const auto s = genre::to_kspace_dataset(mc.images, p.mask, 5)[2];
  p.kG = s.kG;
  p.k0 = s.k0;
  p.mask = p.mask.window(s.frame_ids);
  return p;
}

GeneratorConfig small_config(int unrolls) {
  GeneratorConfig cfg;
  cfg.unrolls = unrolls;
  cfg.base_channels = 4;
  cfg.prompt_channels = 2;
  cfg.acs_lines = 4;
  return cfg;
}

// Give zero-initialized layers (heads, refiner output) small random values.
void randomize_zero_layers(Generator<double>& g, Rng& rng, double scale) {
  for (auto& p : g.params().params)
    if (p.name.find(".head.") != std::string::npos || p.name.rfind("sme.c2", 0) == 0)
      for (auto& v : p.value.data) v = rng.normal(0, scale);
}

genre::ComplexImage<double> gt_combine(const CVolume<double>& kG, const genre::SensitivityMaps<double>& s) {
  return genre::MagnitudeCombine<double>::forward(kG, kG.central_index(), s).combined;
}

TEST(Generator, FullMaskZeroNetworksReturnsGroundTruth) {
  auto p = make_problem(16, 1, 4, 1);
  Rng rng(3);
  auto g = Generator<double>::create(small_config(3), rng);
  for (auto& prm : g.params().params)
    if (prm.name.find("eta") == std::string::npos) std::fill(prm.value.data.begin(), prm.value.data.end(), 0.0);
  const auto tr = g.forward(p.k0, p.mask);
  const auto want = gt_combine(p.kG, tr.sens);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(std::abs(tr.final_image[i] - want[i]), 0.0, 1e-8);
  for (int t = 1; t < tr.unrolls(); ++t) EXPECT_EQ(tr.steps[t].features.data, tr.steps[t - 1].features.data);
}

TEST(Generator, ZeroHeadsMakeUnrollCountIrrelevant) {
  auto p = make_problem(16, 4, 4, 2);
  Rng r1(5), r2(5);
  auto g2 = Generator<double>::create(small_config(2), r1);
  auto g4 = Generator<double>::create(small_config(4), r2);
  const auto a = g2.forward(p.k0, p.mask), b = g4.forward(p.k0, p.mask);
  for (std::size_t i = 0; i < a.final_image.size(); ++i) EXPECT_NEAR(std::abs(a.final_image[i] - b.final_image[i]), 0.0, 1e-12);
  // And equals the zero-filled combine.
  const auto zf = genre::MagnitudeCombine<double>::forward(p.k0, 2, a.sens).combined;
  for (std::size_t i = 0; i < zf.size(); ++i) EXPECT_NEAR(std::abs(a.final_image[i] - zf[i]), 0.0, 1e-12);
}

TEST(Generator, TraceIsSelfConsistent) {
  auto p = make_problem(16, 4, 4, 3);
  Rng rng(7);
  auto g = Generator<double>::create(small_config(3), rng);
  randomize_zero_layers(g, rng, 0.1);
  g.params()[g.eta_index(1)].data[0] = 0.6;
  const auto tr = g.forward(p.k0, p.mask);
  ASSERT_EQ(tr.k.size(), 4u);
  for (int t = 0; t < 3; ++t) {
    const auto gk = genre::fft2c(genre::coil_expand(tr.steps[t].update, tr.sens, 5));
    const double eta = g.params()[g.eta_index(t)].data[0];
    const auto want = genre::data_consistency(tr.k[t], p.k0, p.mask, eta, gk);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_LE(std::abs(tr.k[t + 1].vec()[i] - want.vec()[i]), 1e-12);
    if (eta == 1.0) {
      for (int a = 0; a < 5; ++a)
        for (int c = 0; c < 3; ++c)
          for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
              if (p.mask.at(a, y, x))
                EXPECT_LE(std::abs(tr.k[t + 1].at(a, c, y, x) - (p.k0.at(a, c, y, x) + gk.at(a, c, y, x))), 1e-12);
    }
  }
  const auto fin = genre::MagnitudeCombine<double>::forward(tr.k.back(), 2, tr.sens).combined;
  EXPECT_TRUE(fin == tr.final_image);
  EXPECT_EQ(tr.steps[0].pooled.size(), 4u);
}

TEST(Generator, NoResidualUsesStepFeaturesOnly) {
  auto p = make_problem(16, 4, 4, 4);
  auto cfg = small_config(2);
  Rng a(9), b(9);
  auto res = Generator<double>::create(cfg, a);
  cfg.residual = false;
  auto plain = Generator<double>::create(cfg, b);
  const auto tr = res.forward(p.k0, p.mask), tp = plain.forward(p.k0, p.mask);
  // Step 0 is identical; step 1 differs by exactly F(0).
  EXPECT_EQ(tr.steps[0].features.data, tp.steps[0].features.data);
  for (std::size_t i = 0; i < tr.steps[1].features.size(); ++i)
    EXPECT_NEAR(tr.steps[1].features.data[i], tp.steps[1].features.data[i] + tp.steps[0].features.data[i], 1e-12);
}

TEST(Generator, RejectsWrongShapes) {
  auto p = make_problem(16, 4, 4, 5);
  Rng rng(1);
  auto cfg = small_config(2);
  cfg.adjacent = 3;
  auto g = Generator<double>::create(cfg, rng);
  EXPECT_THROW(g.forward(p.k0, p.mask), genre::Error);
  cfg.adjacent = 4;
  EXPECT_THROW(Generator<double>::create(cfg, rng), genre::Error);
  auto ok = Generator<double>::create(small_config(2), rng);
  auto bad = p.mask;
  for (int y = 6; y < 10; ++y) bad.at(2, y, 0) = 0;
  EXPECT_THROW(ok.forward(p.k0, bad), genre::Error);
}

// Scalar objective touching every output of the unroll: SSIM of the final
// magnitude, a physics term on an intermediate step and a pooled-feature
// probe.
struct EndToEnd {
  Problem p;
  Generator<double> g;
  genre::RealImage<double> target;
  std::vector<double> z_probe;

  double loss() const {
    const auto tr = g.forward(p.k0, p.mask);
    return value(tr);
  }
  double value(const genre::UnrollTrace<double>& tr) const {
    const auto mc = genre::MagnitudeCombine<double>::forward(tr.k.back(), 2, tr.sens);
    double v = 1.0 - genre::ssim(mc.magnitude, target, 1.0);
    const auto ph = genre::kspace_phys_loss<double>(tr.k[1].frame(2), p.kG.frame(2));
    v += 0.1 * ph.magnitude;
    for (std::size_t i = 0; i < z_probe.size(); ++i) v += z_probe[i] * tr.steps[0].pooled[i];
    return v;
  }
  void backward() {
    const auto tr = g.forward(p.k0, p.mask);
    auto grads = genre::GeneratorGrads<double>::zeros(tr);
    const auto mc = genre::MagnitudeCombine<double>::forward(tr.k.back(), 2, tr.sens);
    auto s = genre::ssim_eval(mc.magnitude, target, 1.0, true);
    for (auto& v : s.grad_x.vec()) v = -v;
    mc.backward(s.grad_x, tr.sens, grads.k_central[1].frame(0), &grads.sens);
    // magnitude part of the physics term on k(1)
    auto dst = grads.k_central[0].frame(0);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const cd k = tr.k[1].frame(2)[i];
      const double m = std::abs(k);
      const double gm = std::abs(p.kG.frame(2)[i]);
      dst[i] += m > 0 ? 0.1 * 2.0 * (m - gm) / dst.size() * k / m : cd{};
    }
    grads.pooled[0] = z_probe;
    g.params().zero_grad();
    g.backward(tr, grads);
  }
};

TEST(Generator, EndToEndGradientMatchesFiniteDifferences) {
  Rng rng(21);
  EndToEnd e{make_problem(16, 4, 4, 6), Generator<double>::create(small_config(2), rng), {}, {}};
  randomize_zero_layers(e.g, rng, 0.2);
  e.g.params()[e.g.eta_index(0)].data[0] = 0.7;
  e.target = genre::MagnitudeCombine<double>::forward(e.p.kG, 2, e.g.forward(e.p.k0, e.p.mask).sens).magnitude;
  e.z_probe = {0.3, -0.2, 0.5, 0.1};
  e.backward();
  genre::GradCheckOptions opt;
  opt.max_coords = 40;
  for (const auto& name : {"gen.recon0.e1a.w", "gen.recon1.d2.w", "gen.recon0.head.w", "gen.recon1.head.b",
                           "gen.eta.1", "gen.prompt.0", "sme.c1.w", "sme.c2.w", "gen.recon0.e2b.b"}) {
    auto& t = e.g.params()[e.g.params().find(name)];
    const auto analytic = t.grad;
    EXPECT_GT(genre::norm2<double>(analytic), 0.0) << name;
    const double err = genre::grad_check([&] { return e.loss(); }, t.data, analytic, opt);
    EXPECT_LT(err, 1e-4) << name;
  }
}

TEST(Discriminator, OutputSizeAndDeterminism) {
  Rng rng(1);
  auto d = genre::Discriminator<double>::create(rng);
  Rng data(2);
  const auto a = genre_test::random_real(64, 64, data), b = genre_test::random_real(64, 64, data);
  genre::Discriminator<double>::Cache c1, c2;
  const auto y1 = d.forward(a, b, c1);
  const auto y2 = d.forward(a, b, c2);
  EXPECT_EQ(y1.h, 4);
  EXPECT_EQ(y1.w, 4);
  EXPECT_EQ(y1.data, y2.data);
  EXPECT_THROW(d.forward(a, genre_test::random_real(32, 64, data), c1), genre::Error);
}

TEST(Discriminator, GradientThroughBce) {
  Rng rng(4);
  auto d = genre::Discriminator<double>::create(rng);
  Rng data(5);
  auto a = genre_test::random_real(32, 32, data);
  const auto b = genre_test::random_real(32, 32, data);
  auto loss = [&] {
    genre::Discriminator<double>::Cache c;
    const auto y = d.forward(a, b, c);
    return genre::bce_with_logits<double>(y.data, genre::kLabelFake).value;
  };
  genre::Discriminator<double>::Cache c;
  const auto y = d.forward(a, b, c);
  const auto bce = genre::bce_with_logits<double>(y.data, genre::kLabelFake);
  genre::Tensor4<double> gy(1, 1, y.h, y.w);
  gy.data = bce.grad;
  d.params().zero_grad();
  const auto gx = d.backward(c, gy, true);
  genre::GradCheckOptions opt;
  opt.max_coords = 60;
  for (auto& prm : d.params().params) {
    const auto analytic = prm.value.grad;
    EXPECT_LT(genre::grad_check(loss, prm.value.data, analytic, opt), 1e-5) << prm.name;
  }
  std::vector<double> g_in(gx.ch(0, 0), gx.ch(0, 0) + a.size());
  EXPECT_LT(genre::grad_check(loss, a.vec(), g_in, opt), 1e-5);
  // input_grad leaves parameter gradients alone
  const auto before = d.params().params[0].value.grad;
  const auto gx2 = d.input_grad(c, gy);
  EXPECT_EQ(gx2.data, gx.data);
  EXPECT_EQ(d.params().params[0].value.grad, before);
}

}  // namespace
