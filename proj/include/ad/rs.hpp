#pragma once

#include <cmath>
#include <stdexcept>

#include "ad/core.hpp"
#include "ad/rng.hpp"

namespace ad::rs {

struct RSConfig {
  double gumbel_temperature = 1.0;
  double blur_sigma = 1.0;     // voxels
  Index blur_kernel_radius = 2;

  void validate() const {
    if (gumbel_temperature <= 0) throw std::invalid_argument("RSConfig: temperature must be > 0");
    if (blur_sigma <= 0) throw std::invalid_argument("RSConfig: blur_sigma must be > 0");
    if (blur_kernel_radius < 1) throw std::invalid_argument("RSConfig: radius must be >= 1");
  }
};

/// softmax((logits + noise) / temperature) with caller-provided noise; the
/// sampled variant draws i.i.d. standard Gumbel noise per voxel per class.
template <typename T>
ProbMap<T> gumbel_softmax_with_noise(const ProbMap<T>& logits, const Grid4<T>& noise,
                                     double temperature) {
  if (temperature <= 0) throw std::invalid_argument("gumbel_softmax: temperature must be > 0");
  if (!(noise.shape() == logits.grid().shape()))
    throw std::invalid_argument("gumbel_softmax: noise shape mismatch");
  Grid4<T> shifted(logits.grid().shape(),
                   (logits.grid().array() + noise.array()) / static_cast<T>(temperature));
  return ProbMap<T>(softmax_channels(shifted), ProbKind::simplex);
}

template <typename T>
ProbMap<T> gumbel_softmax(const ProbMap<T>& logits, double temperature, Rng& rng) {
  Grid4<T> noise(logits.grid().shape().c, logits.grid().d(), logits.grid().h(), logits.grid().w());
  for (Index i = 0; i < noise.size(); ++i) noise.array()[i] = static_cast<T>(rng.gumbel());
  return gumbel_softmax_with_noise(logits, noise, temperature);
}

namespace detail {

template <typename T>
ArrayX<T> gaussian_kernel(double sigma, Index radius) {
  ArrayX<T> k(2 * radius + 1);
  for (Index i = -radius; i <= radius; ++i)
    k[i + radius] = static_cast<T>(std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma)));
  k /= k.sum();
  return k;
}

template <typename T>
void blur_axis(const Grid3<T>& src, Grid3<T>& dst, const ArrayX<T>& kernel, Index radius,
               int axis) {
  const Shape3 s = src.shape();
  const Index n = axis == 0 ? s.d : axis == 1 ? s.h : s.w;
  for (Index z = 0; z < s.d; ++z)
    for (Index y = 0; y < s.h; ++y)
      for (Index x = 0; x < s.w; ++x) {
        T acc = T(0);
        const Index base = axis == 0 ? z : axis == 1 ? y : x;
        for (Index i = -radius; i <= radius; ++i) {
          const Index m = reflect_index(base + i, n);
          acc += kernel[i + radius] *
                 (axis == 0 ? src(m, y, x) : axis == 1 ? src(z, m, x) : src(z, y, m));
        }
        dst(z, y, x) = acc;
      }
}

}  // namespace detail

/// Separable per-channel Gaussian convolution with a normalized kernel and
/// reflect padding; per-voxel channel sums are preserved.
template <typename T>
ProbMap<T> gaussian_blur3d(const ProbMap<T>& p, const RSConfig& cfg) {
  cfg.validate();
  if (p.kind() != ProbKind::simplex)
    throw std::invalid_argument("gaussian_blur3d: expected a simplex map");
  const auto kernel = detail::gaussian_kernel<T>(cfg.blur_sigma, cfg.blur_kernel_radius);
  const Shape4 s = p.grid().shape();
  Grid4<T> out(s.c, s.d, s.h, s.w);
  for (Index c = 0; c < s.c; ++c) {
    Grid3<T> a({s.d, s.h, s.w}, p.grid().channel(c));
    Grid3<T> b(s.d, s.h, s.w);
    detail::blur_axis(a, b, kernel, cfg.blur_kernel_radius, 0);
    detail::blur_axis(b, a, kernel, cfg.blur_kernel_radius, 1);
    detail::blur_axis(a, b, kernel, cfg.blur_kernel_radius, 2);
    out.channel(c) = b.array();
  }
  return ProbMap<T>(std::move(out), ProbKind::simplex);
}

/// Pseudo-label ensembling: blur(GumbelSoftmax(p_xi)) + softmax(p_psi),
/// argmax with low-index tie breaking. Only the diffusion map is smoothed,
/// countering the noise the reparameterization injects.
template <typename T>
LabelMap ensemble(const ProbMap<T>& p_xi, const ProbMap<T>& p_psi, const RSConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!(p_xi.grid().shape() == p_psi.grid().shape()))
    throw std::invalid_argument("ensemble: map shapes differ");
  const auto smoothed = gaussian_blur3d(gumbel_softmax(p_xi, cfg.gumbel_temperature, rng), cfg);
  const auto psi_probs = softmax_channels(p_psi.grid());
  Grid4<T> sum(smoothed.grid().shape(), smoothed.grid().array() + psi_probs.array());
  return argmax_decode(ProbMap<T>(std::move(sum), ProbKind::logits));
}

}  // namespace ad::rs
