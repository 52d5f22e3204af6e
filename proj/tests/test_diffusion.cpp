#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <vector>

#include "ad/diffusion.hpp"

using namespace ad;
using namespace ad::diff;

namespace {

OneHot<double> random_one_hot(Rng& rng, Shape3 s, int k) {
  Grid3<std::int32_t> g(s.d, s.h, s.w);
  for (Index i = 0; i < g.size(); ++i) g.array()[i] = static_cast<std::int32_t>(rng.uniform_index(k));
  return one_hot_encode<double>(LabelMap(std::move(g), k));
}

NoiseSchedule forced_schedule(double abar) {
  NoiseSchedule s;
  s.t_max = 1;
  s.beta = ArrayX<double>::Constant(1, 1.0 - abar);
  s.alpha_bar = ArrayX<double>::Constant(1, abar);
  return s;
}

}  // namespace

TEST_CASE("make_schedule T=1 gives alpha_bar = 0.9999") {
  const auto s = make_schedule(1);
  CHECK(s.alpha_bar_at(1) == doctest::Approx(0.9999).epsilon(1e-12));
}

TEST_CASE("make_schedule alpha_bar is strictly decreasing") {
  for (int t_max : {2, 10, 1000}) {
    const auto s = make_schedule(t_max);
    for (int t = 2; t <= t_max; ++t) CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
    CHECK(s.alpha_bar_at(t_max) > 0.0);
  }
}

TEST_CASE("make_schedule rejects T <= 0") {
  CHECK_THROWS_AS(make_schedule(0), std::invalid_argument);
}

TEST_CASE("forward_diffuse limits: abar=1 returns y0, abar=0 returns noise") {
  Rng rng(5);
  const auto y0 = random_one_hot(rng, {2, 2, 2}, 3);
  Grid4<double> eps(3, 2, 2, 2);
  rng.fill_normal(eps.array());

  const auto at_one = forward_diffuse(y0, 1, eps, forced_schedule(1.0));
  CHECK((at_one.array() == y0.grid().array()).all());

  const auto at_zero = forward_diffuse(y0, 1, eps, forced_schedule(0.0));
  CHECK((at_zero.array() == eps.array()).all());
}

TEST_CASE("forward_diffuse matches the closed form at abar=0.25") {
  Grid3<std::int32_t> g(1, 1, 1);
  g(0, 0, 0) = 0;
  const auto y0 = one_hot_encode<double>(LabelMap(std::move(g), 1));
  Grid4<double> eps(1, 1, 1, 1);
  eps(0, 0, 0, 0) = 0.5;
  const auto y_t = forward_diffuse(y0, 1, eps, forced_schedule(0.25));
  // 0.5 * 1 + sqrt(0.75) * 0.5
  CHECK(y_t(0, 0, 0, 0) == doctest::Approx(0.9330127).epsilon(1e-7));
}

TEST_CASE("forward_diffuse rejects t out of range") {
  Rng rng(1);
  const auto y0 = random_one_hot(rng, {1, 1, 1}, 2);
  Grid4<double> eps(2, 1, 1, 1);
  const auto s = make_schedule(10);
  CHECK_THROWS_AS(forward_diffuse(y0, 0, eps, s), std::invalid_argument);
  CHECK_THROWS_AS(forward_diffuse(y0, 11, eps, s), std::invalid_argument);
}

TEST_CASE("forward_diffuse Monte-Carlo mean and variance match the schedule") {
  Rng rng(99);
  Grid3<std::int32_t> g(1, 1, 1);
  g(0, 0, 0) = 0;
  const auto y0 = one_hot_encode<double>(LabelMap(std::move(g), 2));
  const auto sched = make_schedule(100);
  const int t = 60;
  const int n = 10000;
  Eigen::Array2d sum = Eigen::Array2d::Zero(), sum_sq = Eigen::Array2d::Zero();
  for (int i = 0; i < n; ++i) {
    Grid4<double> eps(2, 1, 1, 1);
    rng.fill_normal(eps.array());
    const auto y_t = forward_diffuse(y0, t, eps, sched);
    for (int c = 0; c < 2; ++c) {
      sum[c] += y_t.array()[c];
      sum_sq[c] += y_t.array()[c] * y_t.array()[c];
    }
  }
  const double abar = sched.alpha_bar_at(t);
  const double want_var = 1.0 - abar;
  for (int c = 0; c < 2; ++c) {
    const double mean = sum[c] / n;
    const double var = sum_sq[c] / n - mean * mean;
    const double want_mean = std::sqrt(abar) * (c == 0 ? 1.0 : 0.0);
    const double se_mean = std::sqrt(want_var / n);
    const double se_var = want_var * std::sqrt(2.0 / n);
    CHECK(std::abs(mean - want_mean) < 3 * se_mean);
    CHECK(std::abs(var - want_var) < 3 * se_var);
  }
}

TEST_CASE("ddim_step with a perfect prediction reproduces forward_diffuse at t_prev") {
  Rng rng(7);
  const auto y0 = random_one_hot(rng, {2, 2, 2}, 3);
  Grid4<double> eps(3, 2, 2, 2);
  rng.fill_normal(eps.array());
  const auto sched = make_schedule(50);
  const int t = 40, t_prev = 25;
  const auto y_t = forward_diffuse(y0, t, eps, sched);
  const Grid4<double> pred(y0.grid().shape(), y0.grid().array());
  const auto y_prev = ddim_step(y_t, pred, t, t_prev, sched);
  const auto want = forward_diffuse(y0, t_prev, eps, sched);
  CHECK((y_prev.array() - want.array()).abs().maxCoeff() < 1e-6);
}

TEST_CASE("ddim_step to t_prev=0 returns the prediction") {
  Rng rng(3);
  const auto y0 = random_one_hot(rng, {1, 2, 2}, 2);
  Grid4<double> y_t(2, 1, 2, 2);
  rng.fill_normal(y_t.array());
  const Grid4<double> pred(y0.grid().shape(), y0.grid().array());
  const auto out = ddim_step(y_t, pred, 10, 0, make_schedule(10));
  CHECK((out.array() == pred.array()).all());
}

TEST_CASE("ddim_step is a fixed point when alpha_bar barely changes") {
  NoiseSchedule s;
  s.t_max = 2;
  s.beta = ArrayX<double>::Zero(2);
  s.alpha_bar.resize(2);
  s.alpha_bar[0] = 0.5;
  s.alpha_bar[1] = 0.5 - 1e-12;
  Rng rng(11);
  const auto y0 = random_one_hot(rng, {1, 2, 2}, 2);
  Grid4<double> eps(2, 1, 2, 2);
  rng.fill_normal(eps.array());
  const auto y_t = forward_diffuse(y0, 2, eps, s);
  const Grid4<double> pred(y0.grid().shape(), y0.grid().array());
  const auto out = ddim_step(y_t, pred, 2, 1, s);
  CHECK((out.array() - y_t.array()).abs().maxCoeff() < 1e-6);
}

TEST_CASE("ddim_step rejects t_prev >= t") {
  Grid4<double> a(1, 1, 1, 1), b(1, 1, 1, 1);
  const auto s = make_schedule(10);
  CHECK_THROWS_AS(ddim_step(a, b, 5, 5, s), std::invalid_argument);
  CHECK_THROWS_AS(ddim_step(a, b, 5, 7, s), std::invalid_argument);
}

TEST_CASE("ddim_step composed down the full grid recovers y0 with an oracle denoiser") {
  Rng rng(13);
  const auto y0 = random_one_hot(rng, {2, 2, 2}, 3);
  const auto sched = make_schedule(25);
  Grid4<double> y(3, 2, 2, 2);
  rng.fill_normal(y.array());
  const Grid4<double> pred(y0.grid().shape(), y0.grid().array());
  for (int t = 25; t >= 1; --t) y = ddim_step(y, pred, t, t - 1, sched);
  CHECK((y.array() - y0.grid().array()).abs().maxCoeff() <= 1e-5);
}

TEST_CASE("ddim_generate with an oracle denoiser recovers y0 exactly after argmax") {
  Rng rng(17);
  const auto y0 = random_one_hot(rng, {8, 8, 8}, 3);
  const auto sched = make_schedule(100);
  Denoiser<double> oracle = [&](const Grid4<double>&, int) {
    return Grid4<double>(y0.grid().shape(), y0.grid().array());
  };
  Rng noise_rng(23);
  const auto p = ddim_generate<double>(oracle, y0.grid().shape(), 10, sched, noise_rng);
  const auto decoded = argmax_decode(p);
  const auto want = argmax_decode(ProbMap<double>(y0.grid(), ProbKind::simplex));
  CHECK((decoded.grid().array() == want.grid().array()).all());
}

TEST_CASE("ddim_generate steps=1 degenerates to softmax of one denoiser call") {
  Rng rng(29);
  const auto sched = make_schedule(50);
  Grid4<double> fixed(2, 1, 2, 2);
  rng.fill_normal(fixed.array());
  int calls = 0;
  Denoiser<double> denoiser = [&](const Grid4<double>&, int t) {
    ++calls;
    CHECK(t == 50);
    return fixed;
  };
  Rng noise_rng(31);
  const auto p = ddim_generate<double>(denoiser, fixed.shape(), 1, sched, noise_rng);
  CHECK(calls == 1);
  const auto want = softmax_channels(fixed);
  CHECK((p.grid().array() - want.array()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("ddim_generate is deterministic for a fixed rng seed") {
  Rng rng(41);
  const auto y0 = random_one_hot(rng, {4, 4, 4}, 2);
  const auto sched = make_schedule(20);
  // Denoiser that leaks the noisy input so determinism covers the whole path.
  Denoiser<double> denoiser = [&](const Grid4<double>& y_t, int) {
    return Grid4<double>(y_t.shape(), 0.9 * y0.grid().array() + 0.1 * y_t.array());
  };
  Rng r1(7), r2(7);
  const auto a = ddim_generate<double>(denoiser, y0.grid().shape(), 5, sched, r1);
  const auto b = ddim_generate<double>(denoiser, y0.grid().shape(), 5, sched, r2);
  CHECK((a.grid().array() == b.grid().array()).all());
}

TEST_CASE("timestep_embed t=0 has all-zero sin and all-one cos components") {
  const auto e = timestep_embed(0, 16);
  for (int j = 0; j < 8; ++j) {
    CHECK(e[j] == 0.0);
    CHECK(e[8 + j] == 1.0);
  }
}

TEST_CASE("timestep_embed is injective over [0,1000] at dim 16") {
  std::set<std::vector<double>> seen;
  for (int t = 0; t <= 1000; ++t) {
    const auto e = timestep_embed(t, 16);
    seen.insert(std::vector<double>(e.data(), e.data() + e.size()));
  }
  CHECK(seen.size() == 1001);
}

TEST_CASE("timestep_embed is deterministic and rejects odd dims") {
  const auto a = timestep_embed(123, 32);
  const auto b = timestep_embed(123, 32);
  CHECK((a == b).all());
  CHECK_THROWS_AS(timestep_embed(1, 7), std::invalid_argument);
}
