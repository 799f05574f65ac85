#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "genre/diffnet.hpp"
#include "genre/losses.hpp"
#include "test_support.hpp"

namespace {

using genre::RealImage;
using genre::Rng;
using genre_test::as_doubles;
using genre_test::random_real;
using cd = std::complex<double>;

// SSIM with 7x7 uniform windows, population statistics, valid windows only,
// each window evaluated from scratch.
double reference_ssim(const RealImage<double>& x, const RealImage<double>& y, double L) {
  const double c1 = std::pow(0.01 * L, 2), c2 = std::pow(0.03 * L, 2);
  double total = 0;
  int count = 0;
  for (int r = 0; r + 7 <= x.height(); ++r)
    for (int c = 0; c + 7 <= x.width(); ++c) {
      double mx = 0, my = 0;
      for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
          mx += x(r + i, c + j) / 49;
          my += y(r + i, c + j) / 49;
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
          const double dx = x(r + i, c + j) - mx, dy = y(r + i, c + j) - my;
          vx += dx * dx / 49;
          vy += dy * dy / 49;
          cxy += dx * dy / 49;
        }
      total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / count;
}

RealImage<double> step_image(int h, int w, int edge) {
  RealImage<double> img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = edge; x < w; ++x) img(y, x) = 1.0;
  return img;
}

TEST(Ssim, MatchesWindowedReference) {
  Rng rng(1);
  const auto x = random_real(16, 13, rng), y = random_real(16, 13, rng);
  EXPECT_NEAR(genre::ssim(x, y, 1.0), reference_ssim(x, y, 1.0), 1e-12);
  EXPECT_NEAR(genre::ssim(x, y, 2.5), reference_ssim(x, y, 2.5), 1e-12);
}

TEST(Ssim, IdentityIsOne) {
  Rng rng(2);
  const auto x = random_real(12, 12, rng);
  EXPECT_DOUBLE_EQ(genre::ssim(x, x, 1.0), 1.0);
  const RealImage<double> small(6, 12);
  EXPECT_THROW(genre::ssim(small, small, 1.0), genre::Error);
}

TEST(Ssim, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  auto x = random_real(14, 11, rng);
  const auto y = random_real(14, 11, rng);
  const auto r = genre::ssim_eval(x, y, 1.0, true);
  EXPECT_LT(genre::grad_check([&] { return genre::ssim(x, y, 1.0); }, x.vec(), r.grad_x.vec()), 1e-5);
}

// Support of the smoothed Sobel magnitude for a 0/1 step at column e.
// With replicate padding Sobel responds only at columns e-1 and e, in every
// row; the 5x5 box dilates that by 2 columns each side.
bool expected_edge(int, int x, int, int, int e) { return x >= e - 3 && x <= e + 2; }

TEST(Ear, EdgeMagnitudeMatchesSobelAwayFromBorder) {
  Rng rng(9);
  const auto img = random_real(12, 10, rng);
  const auto m = genre::edge_magnitude(img);
  const auto gx = genre::conv2d_same(img, genre::sobel_x<double>()), gy = genre::conv2d_same(img, genre::sobel_y<double>());
  for (int y = 1; y < 11; ++y)
    for (int x = 1; x < 9; ++x) EXPECT_NEAR(m(y, x), std::hypot(gx(y, x), gy(y, x)), 1e-14);
  const auto flat = genre::edge_magnitude(RealImage<double>(8, 8, 0.37));
  for (double v : flat.vec()) EXPECT_EQ(v, 0.0);
  const auto step = genre::edge_magnitude(step_image(8, 8, 4));
  EXPECT_EQ(step(0, 3), 4.0);
  EXPECT_EQ(step(4, 4), 4.0);
  EXPECT_EQ(step(4, 7), 0.0);
}

TEST(Ear, StepMaskMatchesHandDerivedSupport) {
  for (auto [h, w, e] : {std::tuple{24, 32, 12}, std::tuple{20, 20, 6}}) {
    const auto m = genre::ear_mask(step_image(h, w, e));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) EXPECT_EQ(m.b(y, x) != 0, expected_edge(y, x, h, w, e)) << y << "," << x;
  }
}

TEST(Ear, IdentityAndConstantCases) {
  const auto gt = step_image(24, 24, 10);
  const auto r = genre::ear_loss(gt, gt, 1.0);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_FALSE(r.empty_mask);
  const RealImage<double> flat(24, 24, 0.0);
  EXPECT_TRUE(genre::ear_mask(flat).empty());
  EXPECT_TRUE(genre::ear_mask(RealImage<double>(24, 24, 0.8)).empty());
  const auto c = genre::ear_loss(gt, flat, 1.0);
  EXPECT_TRUE(c.empty_mask);
  EXPECT_EQ(c.value, 0.0);
}

TEST(Ear, IgnoresErrorsAwayFromEdges) {
  // Flat-region error changes global SSIM but not the edge-restricted loss.
  const auto gt = step_image(32, 32, 16);
  RealImage<double> rec = gt;
  for (int y = 10; y < 20; ++y)
    for (int x = 2; x < 8; ++x) rec(y, x) = 0.3;
  EXPECT_EQ(genre::ear_loss(rec, gt, 1.0).value, 0.0);
  EXPECT_GT(1.0 - genre::ssim(rec, gt, 1.0), 0.01);
  // Error inside the edge band is seen.
  rec = gt;
  for (int y = 10; y < 20; ++y) rec(y, 16) = 0.5;
  EXPECT_GT(genre::ear_loss(rec, gt, 1.0).value, 0.0);
}

TEST(Ear, PercentileThreshold) {
  const auto gt = step_image(24, 24, 10);
  const auto loose = genre::ear_mask(gt);
  const auto tight = genre::ear_mask(gt, {genre::EarThreshold::Mode::Percentile, 90.0});
  std::size_t nl = 0, nt = 0;
  for (std::size_t i = 0; i < loose.b.size(); ++i) {
    nl += loose.b[i];
    nt += tight.b[i];
    if (tight.b[i]) EXPECT_TRUE(loose.b[i]);
  }
  EXPECT_LT(nt, nl);
  EXPECT_LE(nt, loose.b.size() / 10 + 1);
}

TEST(Ear, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  const auto gt = step_image(16, 16, 7);
  auto rec = random_real(16, 16, rng);
  const auto r = genre::ear_loss(rec, gt, 1.0, {}, true);
  EXPECT_LT(genre::grad_check([&] { return genre::ear_loss(rec, gt, 1.0).value; }, rec.vec(), r.grad_rec.vec()),
            1e-6);
  auto g2 = gt;
  for (auto& v : g2.vec()) v += 0.05 * rng.normal();
  const auto r2 = genre::ear_loss(rec, g2, 1.0, {}, true);
  // Mask held fixed: check on a copy of gt perturbed only inside the mask.
  const auto mask = genre::ear_mask(g2);
  auto loss_gt = [&] {
    const auto m = genre::apply_edge_mask(mask, g2), x = genre::apply_edge_mask(mask, rec);
    return 1.0 - genre::ssim(x, m, 1.0);
  };
  for (std::size_t i = 0; i < g2.size(); ++i) EXPECT_TRUE(mask.b[i] || r2.grad_gt[i] == 0.0);
  EXPECT_LT(genre::grad_check(loss_gt, g2.vec(), r2.grad_gt.vec()), 1e-5);
}

TEST(Phys, ValuesMatchDefinition) {
  const std::vector<cd> gt = {{1, 0}, {0, 2}, {0, 0}, {1e-6, 0}};
  const std::vector<cd> pred = {{0, 1}, {0, 1}, {1, 0}, {-1, 0}};
  const auto r = genre::kspace_phys_loss<double>(pred, gt);
  // magnitudes: (1-1)^2 + (1-2)^2 + (1-0)^2 + (1-1e-6)^2 over 4
  EXPECT_NEAR(r.magnitude, (0 + 1 + 1 + std::pow(1 - 1e-6, 2)) / 4, 1e-15);
  // phase support: |gt| > 2e-3 keeps the first two entries; phase errors pi/2 and 0
  EXPECT_NEAR(r.phase, (std::pow(std::numbers::pi / 2, 2) + 0) / 2, 1e-15);
}

TEST(Phys, PhaseIsWrapped) {
  const std::vector<cd> gt = {std::polar(1.0, 3.0)};
  const std::vector<cd> pred = {std::polar(1.0, -3.0)};
  const auto r = genre::kspace_phys_loss<double>(pred, gt);
  EXPECT_NEAR(r.phase, std::pow(2 * std::numbers::pi - 6.0, 2), 1e-12);
}

TEST(Phys, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  std::vector<cd> pred(40), gt(40);
  for (auto& z : pred) z = {rng.normal(), rng.normal()};
  for (auto& z : gt) z = {rng.normal(), rng.normal()};
  gt[3] = {};
  auto loss = [&] {
    const auto r = genre::kspace_phys_loss<double>(pred, gt);
    return r.magnitude + r.phase;
  };
  const auto r = genre::kspace_phys_loss<double>(pred, gt);
  EXPECT_LT(genre::grad_check(loss, as_doubles(pred), as_doubles(r.grad)), 1e-6);
}

TEST(Fidelity, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  auto kp = genre_test::random_volume(3, 2, 10, 10, rng);
  const auto kg = genre_test::random_volume(3, 2, 10, 10, rng);
  const auto s = genre::make_sensitivities(genre::rss_normalize(genre_test::random_volume(1, 2, 10, 10, rng)));
  const auto r = genre::fidelity_loss(kp, 1, kg, 1, s);
  std::vector<cd> g(kp.size());
  std::copy(r.grad_pred.vec().begin(), r.grad_pred.vec().end(), g.begin() + kp.frame(1).size());
  auto loss = [&] { return genre::fidelity_loss(kp, 1, kg, 1, s).total(); };
  EXPECT_LT(genre::grad_check(loss, as_doubles(kp.vec()), as_doubles(g)), 1e-5);
  EXPECT_NEAR(genre::fidelity_loss(kg, 1, kg, 1, s).total(), 0.0, 1e-12);
}

TEST(SymKl, OneDimensionalClosedForm) {
  const genre::GaussianSummary a{{0.0}, {1.0}}, b{{1.0}, {1.0}};
  EXPECT_NEAR(genre::sym_kl(a, b), 1.0, 1e-12);
  const genre::GaussianSummary c{{0.5}, {2.0}}, d{{-1.0}, {0.5}};
  // 1/2 [4 + 1/4 + 2.25 * 2.5 - 2]
  EXPECT_NEAR(genre::sym_kl(c, d), 0.5 * (4 + 0.25 + 2.25 * 2.5 - 2), 1e-12);
  EXPECT_EQ(genre::sym_kl(c, c), 0.0);
}

TEST(SymKl, MonteCarloAgrees) {
  const genre::GaussianSummary a{{0.3, -1.0}, {1.5, 0.4}}, b{{-0.2, 0.5}, {0.8, 1.1}};
  auto logpdf = [](const genre::GaussianSummary& g, const double* x) {
    double s = 0;
    for (int k = 0; k < 2; ++k)
      s += -0.5 * std::log(2 * std::numbers::pi * g.var[k]) - 0.5 * (x[k] - g.mu[k]) * (x[k] - g.mu[k]) / g.var[k];
    return s;
  };
  Rng rng(99);
  const int n = 1000000;
  double kab = 0, kba = 0;
  double x[2];
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 2; ++k) x[k] = rng.normal(a.mu[k], std::sqrt(a.var[k]));
    kab += logpdf(a, x) - logpdf(b, x);
    for (int k = 0; k < 2; ++k) x[k] = rng.normal(b.mu[k], std::sqrt(b.var[k]));
    kba += logpdf(b, x) - logpdf(a, x);
  }
  const double mc = (kab + kba) / n;
  EXPECT_NEAR(mc / genre::sym_kl(a, b), 1.0, 0.02);
}

TEST(SymKl, FitUsesPopulationVarianceWithFloor) {
  const auto g = genre::fit_gaussian({{1.0, 2.0}, {3.0, 2.0}});
  EXPECT_DOUBLE_EQ(g.mu[0], 2.0);
  EXPECT_DOUBLE_EQ(g.var[0], 1.0);
  EXPECT_DOUBLE_EQ(g.var[1], genre::kVarianceFloor);
}

TEST(FeatureBank, RingEvictionAndIsolation) {
  genre::FeatureBank bank(2, 3, 4);
  for (int i = 0; i < 6; ++i) bank.update(0, 1, {double(i)});
  ASSERT_EQ(bank.at(0, 1).size(), 4u);
  EXPECT_EQ(bank.at(0, 1).front()[0], 2.0);
  EXPECT_EQ(bank.at(0, 1).back()[0], 5.0);
  EXPECT_TRUE(bank.at(0, 0).empty());
  EXPECT_TRUE(bank.at(1, 1).empty());
  const auto before = bank.at(0, 2);
  bank.update(0, 0, {7.0});
  EXPECT_EQ(bank.at(0, 2), before);
  EXPECT_EQ(bank.newest_domain(0), 0);
  EXPECT_EQ(bank.newest_domain(1), -1);
  EXPECT_THROW(bank.update(2, 0, {1.0}), genre::Error);
}

// Pairwise mean of the symmetric KL computed from the raw bank contents.
double reference_sda_layer(const genre::FeatureBank& bank, int layer) {
  std::vector<std::pair<std::vector<double>, std::vector<double>>> fits;
  for (int d = 0; d < bank.domains(); ++d) {
    const auto& q = bank.at(layer, d);
    if (q.size() < 2) continue;
    const std::size_t dim = q.front().size();
    std::vector<double> mu(dim), var(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      for (const auto& v : q) mu[k] += v[k];
      mu[k] /= q.size();
      for (const auto& v : q) var[k] += (v[k] - mu[k]) * (v[k] - mu[k]);
      var[k] = std::max(var[k] / q.size(), 1e-5);
    }
    fits.emplace_back(mu, var);
  }
  double acc = 0;
  int pairs = 0;
  for (std::size_t i = 0; i < fits.size(); ++i)
    for (std::size_t j = i + 1; j < fits.size(); ++j) {
      for (std::size_t k = 0; k < fits[i].first.size(); ++k) {
        const double va = fits[i].second[k], vb = fits[j].second[k], dm = fits[i].first[k] - fits[j].first[k];
        acc += 0.5 * (va / vb + vb / va + dm * dm * (1 / va + 1 / vb) - 2);
      }
      ++pairs;
    }
  return pairs ? acc / pairs : 0.0;
}

TEST(Sda, MatchesRecomputationFromBank) {
  Rng rng(7);
  genre::FeatureBank bank(3, 5, 4);
  for (int it = 0; it < 40; ++it) {
    const int d = static_cast<int>(rng.below(5));
    for (int l = 0; l < 3; ++l) {
      std::vector<double> z(6);
      for (auto& v : z) v = rng.normal(0.2 * d, 1.0 + 0.1 * l);
      bank.update(l, d, z);
    }
    const auto r = genre::sda_loss(bank);
    double want = 0;
    for (int l = 0; l < 3; ++l) {
      const double ref = reference_sda_layer(bank, l);
      EXPECT_NEAR(genre::sda_layer(bank, l).value, ref, 1e-12 * std::max(1.0, ref));
      want += ref;
    }
    EXPECT_NEAR(r.value, want, 1e-12 * std::max(1.0, want));
  }
}

TEST(Sda, NotEnoughSamples) {
  genre::FeatureBank bank(1, 3, 4);
  bank.update(0, 0, {1.0});
  bank.update(0, 0, {2.0});
  bank.update(0, 1, {1.0});
  const auto r = genre::sda_loss(bank);
  EXPECT_TRUE(r.not_enough_samples);
  EXPECT_EQ(r.value, 0.0);
  bank.update(0, 1, {3.0});
  EXPECT_FALSE(genre::sda_loss(bank).not_enough_samples);
}

TEST(Sda, GradientWithRespectToNewestVector) {
  Rng rng(8);
  genre::FeatureBank bank(1, 3, 4);
  for (int i = 0; i < 4; ++i)
    for (int d = 0; d < 3; ++d) {
      std::vector<double> z(5);
      for (auto& v : z) v = rng.normal(0.3 * d, 1.0);
      bank.update(0, d, z);
    }
  std::vector<double> z(5);
  for (auto& v : z) v = rng.normal(0.5, 1.0);
  auto with = [&](const std::vector<double>& v) {
    auto b = bank;
    b.update(0, 1, v);
    return b;
  };
  const auto r = genre::sda_layer(with(z), 0);
  ASSERT_EQ(r.grad_newest.size(), 5u);
  EXPECT_LT(genre::grad_check([&] { return genre::sda_layer(with(z), 0).value; }, z, r.grad_newest), 1e-6);
}

TEST(Bce, ValuesAndGradient) {
  std::vector<double> logits = {0.0, 2.0, -1.5};
  const auto r0 = genre::bce_with_logits<double>(logits, genre::kLabelReal);
  const double want = (std::log(2.0) + std::log1p(std::exp(2.0)) + std::log1p(std::exp(-1.5))) / 3;
  EXPECT_NEAR(r0.value, want, 1e-14);
  for (double label : {0.0, 1.0}) {
    const auto r = genre::bce_with_logits<double>(logits, label);
    EXPECT_LT(genre::grad_check([&] { return genre::bce_with_logits<double>(logits, label).value; }, logits, r.grad),
              1e-7);
  }
  std::vector<double> big = {800.0, -800.0};
  EXPECT_TRUE(std::isfinite(genre::bce_with_logits<double>(big, 1.0).value));
}

TEST(Metrics, PsnrAndNmse) {
  RealImage<double> gt(2, 2), rec(2, 2);
  gt.vec() = {0.5, 1.0, 0.0, 0.5};
  rec.vec() = {0.5, 0.9, 0.1, 0.5};
  EXPECT_NEAR(genre::psnr(rec, gt), 10 * std::log10(1.0 / 0.005), 1e-12);
  EXPECT_NEAR(genre::nmse(rec, gt), 0.02 / 1.5, 1e-15);
  EXPECT_TRUE(std::isinf(genre::psnr(gt, gt)));
  EXPECT_EQ(genre::nmse(gt, gt), 0.0);
  const RealImage<double> zero(2, 2);
  EXPECT_THROW(genre::nmse(rec, zero), genre::Error);
}

}  // namespace
