#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "ad/core.hpp"
#include "ad/rng.hpp"

namespace ad::diff {

/// Per-timestep noise coefficients. beta and alpha_bar are 1-based in t;
/// alpha_bar_at(0) == 1 by convention so a final DDIM hop to t=0 is exact.
struct NoiseSchedule {
  int t_max = 0;
  ArrayX<double> beta;       // length T
  ArrayX<double> alpha_bar;  // length T, cumulative products of (1 - beta)

  double beta_at(int t) const { return beta[t - 1]; }
  double alpha_bar_at(int t) const { return t == 0 ? 1.0 : alpha_bar[t - 1]; }

  void validate() const {
    if (t_max < 1 || beta.size() != t_max || alpha_bar.size() != t_max)
      throw std::invalid_argument("NoiseSchedule: inconsistent sizes");
    if (alpha_bar[0] >= 1.0) throw std::invalid_argument("NoiseSchedule: alpha_bar_1 must be < 1");
    if (alpha_bar[t_max - 1] <= 0.0)
      throw std::invalid_argument("NoiseSchedule: alpha_bar_T must be > 0");
    for (Index i = 1; i < alpha_bar.size(); ++i)
      if (alpha_bar[i] >= alpha_bar[i - 1])
        throw std::invalid_argument("NoiseSchedule: alpha_bar must be strictly decreasing");
  }
};

/// Linear beta schedule from 1e-4 to 2e-2 over T steps.
inline NoiseSchedule make_schedule(int t_steps) {
  if (t_steps < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
  NoiseSchedule s;
  s.t_max = t_steps;
  s.beta.resize(t_steps);
  s.alpha_bar.resize(t_steps);
  constexpr double kBetaStart = 1e-4, kBetaEnd = 2e-2;
  double prod = 1.0;
  for (int t = 0; t < t_steps; ++t) {
    s.beta[t] = t_steps == 1
                    ? kBetaStart
                    : kBetaStart + (kBetaEnd - kBetaStart) * static_cast<double>(t) /
                                       static_cast<double>(t_steps - 1);
    prod *= 1.0 - s.beta[t];
    s.alpha_bar[t] = prod;
  }
  s.validate();
  return s;
}

/// y_t = sqrt(abar_t) * y0 + sqrt(1 - abar_t) * eps.
template <typename T>
Grid4<T> forward_diffuse(const OneHot<T>& y0, int t, const Grid4<T>& eps,
                         const NoiseSchedule& sched) {
  if (t < 1 || t > sched.t_max) throw std::invalid_argument("forward_diffuse: t out of range");
  if (!(eps.shape() == y0.grid().shape()))
    throw std::invalid_argument("forward_diffuse: noise shape mismatch");
  const T a = static_cast<T>(std::sqrt(sched.alpha_bar_at(t)));
  const T b = static_cast<T>(std::sqrt(1.0 - sched.alpha_bar_at(t)));
  return Grid4<T>(y0.grid().shape(), a * y0.grid().array() + b * eps.array());
}

/// One deterministic (eta = 0) DDIM hop from t to t_prev < t, with the
/// decoder output read as a prediction of the clean one-hot label.
template <typename T>
Grid4<T> ddim_step(const Grid4<T>& y_t, const Grid4<T>& pred_y0, int t, int t_prev,
                   const NoiseSchedule& sched) {
  if (t_prev >= t || t_prev < 0 || t > sched.t_max)
    throw std::invalid_argument("ddim_step: need t > t_prev >= 0");
  if (!(y_t.shape() == pred_y0.shape()))
    throw std::invalid_argument("ddim_step: shape mismatch");
  if (t_prev == 0) return pred_y0;
  const double ab_t = sched.alpha_bar_at(t);
  const double ab_p = sched.alpha_bar_at(t_prev);
  const T c_pred = static_cast<T>(std::sqrt(ab_p));
  const T c_dir = static_cast<T>(std::sqrt((1.0 - ab_p) / (1.0 - ab_t)));
  const T c_t = static_cast<T>(std::sqrt(ab_t));
  return Grid4<T>(y_t.shape(),
                  c_pred * pred_y0.array() + c_dir * (y_t.array() - c_t * pred_y0.array()));
}

/// Evenly spaced descending timestep grid T = t_0 > t_1 > ... > t_steps = 0.
inline std::vector<int> ddim_timesteps(int t_max, int steps) {
  if (steps < 1) throw std::invalid_argument("ddim_timesteps: steps must be >= 1");
  steps = std::min(steps, t_max);
  std::vector<int> ts(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i)
    ts[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(
        static_cast<double>(t_max) * static_cast<double>(steps - i) / static_cast<double>(steps)));
  return ts;
}

template <typename T>
using Denoiser = std::function<Grid4<T>(const Grid4<T>& y_t, int t)>;

/// Run the reverse sampler from pure noise and return the final clean-label
/// logits (the last predicted y0). The conditioning volume is baked into the
/// denoiser callable.
template <typename T>
Grid4<T> ddim_generate_logits(const Denoiser<T>& denoiser, Shape4 shape, int steps,
                              const NoiseSchedule& sched, Rng& rng) {
  Grid4<T> y(shape.c, shape.d, shape.h, shape.w);
  rng.fill_normal(y.array());
  const auto ts = ddim_timesteps(sched.t_max, steps);
  Grid4<T> logits;
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    logits = denoiser(y, ts[i]);
    if (!(logits.shape() == shape))
      throw std::runtime_error("ddim_generate: denoiser output shape mismatch");
    y = ddim_step(y, logits, ts[i], ts[i + 1], sched);
  }
  return y;  // == pred_y0 from the final hop to t=0
}

/// Spec-facing sampler: softmax of the final logits as a simplex map.
template <typename T>
ProbMap<T> ddim_generate(const Denoiser<T>& denoiser, Shape4 shape, int steps,
                         const NoiseSchedule& sched, Rng& rng) {
  return ProbMap<T>(softmax_channels(ddim_generate_logits(denoiser, shape, steps, sched, rng)),
                    ProbKind::simplex);
}

/// Sinusoidal position features of the integer timestep: dim/2 (sin, cos)
/// pairs at geometrically spaced frequencies.
inline ArrayX<double> timestep_embed(int t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("timestep_embed: dim must be even");
  const int half = dim / 2;
  ArrayX<double> out(dim);
  for (int j = 0; j < half; ++j) {
    const double freq =
        half == 1 ? 1.0 : std::exp(-std::log(10000.0) * static_cast<double>(j) / (half - 1));
    out[j] = std::sin(t * freq);
    out[half + j] = std::cos(t * freq);
  }
  return out;
}

}  // namespace ad::diff
