#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>

#include "ad/rs.hpp"

using namespace ad;
using namespace ad::rs;

namespace {

ProbMap<double> random_logits(Rng& rng, Shape4 s) {
  Grid4<double> g(s.c, s.d, s.h, s.w);
  rng.fill_normal(g.array());
  return ProbMap<double>(std::move(g), ProbKind::logits);
}

}  // namespace

TEST_CASE("gumbel_softmax with zero noise and temperature 1 is plain softmax") {
  Rng rng(1);
  const auto logits = random_logits(rng, {3, 2, 2, 2});
  Grid4<double> zero(3, 2, 2, 2);
  const auto out = gumbel_softmax_with_noise(logits, zero, 1.0);
  const auto want = softmax_channels(logits.grid());
  CHECK((out.grid().array() - want.array()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("gumbel_softmax at temperature -> 0 one-hots the argmax of logits+noise") {
  Rng rng(2);
  const auto logits = random_logits(rng, {4, 2, 2, 2});
  Grid4<double> noise(4, 2, 2, 2);
  rng.fill_normal(noise.array());
  const auto out = gumbel_softmax_with_noise(logits, noise, 1e-6);
  Grid4<double> shifted(logits.grid().shape(), logits.grid().array() + noise.array());
  const auto want = argmax_decode(shifted);
  const Index vox = out.grid().voxels();
  for (Index i = 0; i < vox; ++i) {
    const Index k = want.grid().array()[i];
    CHECK(out.grid().array()[k * vox + i] == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("gumbel_softmax rejects nonpositive temperature") {
  Rng rng(3);
  const auto logits = random_logits(rng, {2, 1, 1, 1});
  CHECK_THROWS_AS(gumbel_softmax(logits, 0.0, rng), std::invalid_argument);
}

TEST_CASE("Gumbel-max: empirical argmax frequencies match softmax over 1e5 draws") {
  Grid4<double> g(3, 1, 1, 1);
  g(0, 0, 0, 0) = 0.5;
  g(1, 0, 0, 0) = -0.2;
  g(2, 0, 0, 0) = 1.0;
  const ProbMap<double> logits(g, ProbKind::logits);
  const auto probs = softmax_channels(g);

  Rng rng(12345);
  const int n = 100000;
  std::array<int, 3> counts = {0, 0, 0};
  for (int i = 0; i < n; ++i) {
    // Temperature near zero turns the draw into a hard Gumbel-max sample.
    const auto y = argmax_decode(gumbel_softmax(logits, 1e-6, rng).grid());
    counts[static_cast<std::size_t>(y.grid().array()[0])]++;
  }
  for (int k = 0; k < 3; ++k) {
    const double p = probs.array()[k];
    const double se = std::sqrt(p * (1 - p) / n);
    CHECK(std::abs(static_cast<double>(counts[static_cast<std::size_t>(k)]) / n - p) < 3 * se);
  }
}

TEST_CASE("gaussian_blur3d leaves the uniform map unchanged") {
  Grid4<double> g(3, 4, 4, 4);
  for (Index c = 0; c < 3; ++c) g.channel(c).setConstant(1.0 / 3.0);
  RSConfig cfg;
  const auto out = gaussian_blur3d(ProbMap<double>(g, ProbKind::simplex), cfg);
  CHECK((out.grid().array() - 1.0 / 3.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("gaussian_blur3d spreads a spike, conserving channel mass (5^3 oracle)") {
  Grid4<double> g(2, 5, 5, 5);
  g.channel(1).setZero();
  g.channel(0).setConstant(1.0);
  g(0, 2, 2, 2) = 0.0;
  g(1, 2, 2, 2) = 1.0;
  RSConfig cfg;
  cfg.blur_sigma = 0.8;
  cfg.blur_kernel_radius = 1;
  const auto out = gaussian_blur3d(ProbMap<double>(g, ProbKind::simplex), cfg);

  // Oracle: dense 3D convolution with the explicit 3x3x3 product kernel and
  // reflected indices.
  ArrayX<double> k1(3);
  for (Index i = -1; i <= 1; ++i) k1[i + 1] = std::exp(-0.5 * i * i / (0.8 * 0.8));
  k1 /= k1.sum();
  for (Index c = 0; c < 2; ++c)
    for (Index z = 0; z < 5; ++z)
      for (Index y = 0; y < 5; ++y)
        for (Index x = 0; x < 5; ++x) {
          double want = 0;
          for (Index a = -1; a <= 1; ++a)
            for (Index b = -1; b <= 1; ++b)
              for (Index d = -1; d <= 1; ++d)
                want += k1[a + 1] * k1[b + 1] * k1[d + 1] *
                        g(c, reflect_index(z + a, 5), reflect_index(y + b, 5),
                          reflect_index(x + d, 5));
          CHECK(out.grid()(c, z, y, x) == doctest::Approx(want).epsilon(1e-12));
        }

  // Mass conservation per channel under reflect padding.
  CHECK(out.grid().channel(0).sum() == doctest::Approx(g.channel(0).sum()).epsilon(1e-12));
  CHECK(out.grid().channel(1).sum() == doctest::Approx(g.channel(1).sum()).epsilon(1e-12));
  // Spike spread out.
  CHECK(out.grid()(1, 2, 2, 2) < 1.0);
  CHECK(out.grid()(1, 2, 2, 3) > 0.0);
}

TEST_CASE("gaussian_blur3d with tiny sigma is the identity within 1e-6") {
  Rng rng(5);
  Grid4<double> g(2, 3, 3, 3);
  for (Index i = 0; i < g.voxels(); ++i) {
    const double p = rng.uniform();
    g.array()[i] = p;
    g.array()[g.voxels() + i] = 1.0 - p;
  }
  RSConfig cfg;
  cfg.blur_sigma = 1e-3;
  const auto out = gaussian_blur3d(ProbMap<double>(g, ProbKind::simplex), cfg);
  CHECK((out.grid().array() - g.array()).abs().maxCoeff() < 1e-6);
}

TEST_CASE("blur preserves per-voxel simplex sums") {
  Rng rng(7);
  Grid4<double> g(3, 4, 4, 4);
  for (Index i = 0; i < g.voxels(); ++i) {
    double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
    const double s = a + b + c;
    g.array()[i] = a / s;
    g.array()[g.voxels() + i] = b / s;
    g.array()[2 * g.voxels() + i] = c / s;
  }
  RSConfig cfg;
  const auto out = gaussian_blur3d(ProbMap<double>(g, ProbKind::simplex), cfg);
  for (Index i = 0; i < out.grid().voxels(); ++i) {
    double s = 0;
    for (Index c = 0; c < 3; ++c) s += out.grid().array()[c * out.grid().voxels() + i];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("ensemble returns all-c when both maps agree sharply on class c") {
  Grid4<double> xi(3, 3, 3, 3), psi(3, 3, 3, 3);
  xi.channel(2).setConstant(50.0);
  psi.channel(2).setConstant(50.0);
  RSConfig cfg;
  Rng rng(11);
  const auto y = ensemble(ProbMap<double>(xi, ProbKind::logits),
                          ProbMap<double>(psi, ProbKind::logits), cfg, rng);
  CHECK((y.grid().array() == 2).all());
  CHECK(y.num_classes() == 3);
}

TEST_CASE("ensemble follows a dominant diffusion map against a uniform psi map") {
  Grid4<double> xi(3, 2, 2, 2), psi(3, 2, 2, 2);
  xi.channel(2).setConstant(60.0);  // margin far beyond the Gumbel scale
  RSConfig cfg;
  cfg.blur_sigma = 0.3;
  int agree = 0;
  const int seeds = 100;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(static_cast<std::uint64_t>(s) + 1);
    const auto y = ensemble(ProbMap<double>(xi, ProbKind::logits),
                            ProbMap<double>(psi, ProbKind::logits), cfg, rng);
    if ((y.grid().array() == 2).all()) ++agree;
  }
  CHECK(agree >= 99);
}

TEST_CASE("ensemble is deterministic for a fixed rng") {
  Rng gen(13);
  const auto xi = random_logits(gen, {4, 3, 3, 3});
  const auto psi = random_logits(gen, {4, 3, 3, 3});
  RSConfig cfg;
  Rng r1(17), r2(17);
  const auto a = ensemble(xi, psi, cfg, r1);
  const auto b = ensemble(xi, psi, cfg, r2);
  CHECK((a.grid().array() == b.grid().array()).all());
}

TEST_CASE("ensemble output is a valid LabelMap over random inputs") {
  Rng gen(19);
  for (int trial = 0; trial < 10; ++trial) {
    const auto xi = random_logits(gen, {5, 2, 2, 2});
    const auto psi = random_logits(gen, {5, 2, 2, 2});
    RSConfig cfg;
    Rng rng(100 + static_cast<std::uint64_t>(trial));
    const auto y = ensemble(xi, psi, cfg, rng);
    CHECK((y.grid().array() >= 0).all());
    CHECK((y.grid().array() < 5).all());
  }
}

TEST_CASE("adding a per-voxel constant to either logits map changes nothing") {
  Rng gen(23);
  const auto xi = random_logits(gen, {3, 2, 2, 2});
  const auto psi = random_logits(gen, {3, 2, 2, 2});
  const ProbMap<double> xi_shift(Grid4<double>(xi.grid().shape(), xi.grid().array() + 7.0),
                                 ProbKind::logits);
  const ProbMap<double> psi_shift(Grid4<double>(psi.grid().shape(), psi.grid().array() - 3.0),
                                  ProbKind::logits);
  RSConfig cfg;
  Rng r1(29), r2(29);
  const auto a = ensemble(xi, psi, cfg, r1);
  const auto b = ensemble(xi_shift, psi_shift, cfg, r2);
  CHECK((a.grid().array() == b.grid().array()).all());
}

TEST_CASE("blur off and temperature -> 0 reduce ensemble to the stated form") {
  Rng gen(31);
  const auto xi = random_logits(gen, {3, 2, 2, 2});
  const auto psi = random_logits(gen, {3, 2, 2, 2});

  // Zero Gumbel noise, hard temperature, near-delta blur.
  Grid4<double> zero(3, 2, 2, 2);
  const auto hard = gumbel_softmax_with_noise(xi, zero, 1e-7);
  RSConfig cfg;
  cfg.blur_sigma = 1e-4;
  const auto smoothed = gaussian_blur3d(hard, cfg);
  const auto psi_probs = softmax_channels(psi.grid());
  Grid4<double> sum(smoothed.grid().shape(), smoothed.grid().array() + psi_probs.array());
  const auto got = argmax_decode(sum);

  // Stated reduction: argmax of one-hot(argmax(xi)) + softmax(psi).
  const auto onehot = one_hot_encode<double>(argmax_decode(xi.grid()));
  Grid4<double> want_sum(onehot.grid().shape(), onehot.grid().array() + psi_probs.array());
  const auto want = argmax_decode(want_sum);
  CHECK((got.grid().array() == want.grid().array()).all());
}
