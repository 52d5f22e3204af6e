#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ad/core.hpp"
#include "ad/rng.hpp"

namespace ad::svda {

enum class OpName {
  random_crop,
  random_rotation,
  random_scaling,
  gaussian_blur,
  brightness,
  contrast,
  gamma
};

enum class OpKind { spatial, voxel };

constexpr int kNumOps = 7;

inline OpKind kind_of(OpName op) {
  switch (op) {
    case OpName::random_crop:
    case OpName::random_rotation:
    case OpName::random_scaling:
      return OpKind::spatial;
    default:
      return OpKind::voxel;
  }
}

inline std::string to_string(OpName op) {
  switch (op) {
    case OpName::random_crop: return "random_crop";
    case OpName::random_rotation: return "random_rotation";
    case OpName::random_scaling: return "random_scaling";
    case OpName::gaussian_blur: return "gaussian_blur";
    case OpName::brightness: return "brightness";
    case OpName::contrast: return "contrast";
    case OpName::gamma: return "gamma";
  }
  return "?";
}

struct AugmentationOp {
  OpName name;
  OpKind kind;
};

/// Parameter ranges; defaults mirror standard volumetric-segmentation
/// augmentation pipelines.
struct SvdaConfig {
  Shape3 patch{16, 16, 16};  // random_crop target
  // One (min, max) degree range per rotation axis (depth, height, width).
  std::array<std::pair<double, double>, 3> rotation_deg{
      {{-30.0, 30.0}, {-30.0, 30.0}, {-30.0, 30.0}}};
  double scale_min = 0.85, scale_max = 1.25;
  double blur_sigma_min = 0.5, blur_sigma_max = 1.5;         // voxels
  double brightness_frac = 0.1;           // shift as fraction of dynamic range
  double contrast_min = 0.75, contrast_max = 1.25;
  double gamma_min = 0.7, gamma_max = 1.5;
};

struct AppliedOp {
  OpName name;
  std::vector<double> params;
};

template <typename T>
struct AugmentedPair {
  Volume<T> volume;
  std::optional<LabelMap> label;
  std::vector<AppliedOp> applied;
};

/// Draw n_aug distinct ops uniformly without replacement, in sampled order.
inline std::vector<AugmentationOp> sample_ops(int n_aug, Rng& rng) {
  if (n_aug < 1 || n_aug > kNumOps)
    throw std::invalid_argument("sample_ops: n_aug must be in [1, 7]");
  std::array<OpName, kNumOps> pool = {OpName::random_crop,  OpName::random_rotation,
                                      OpName::random_scaling, OpName::gaussian_blur,
                                      OpName::brightness,     OpName::contrast,
                                      OpName::gamma};
  // Partial Fisher-Yates.
  for (int i = 0; i < n_aug; ++i) {
    const Index j = i + rng.uniform_index(kNumOps - i);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  std::vector<AugmentationOp> out;
  for (int i = 0; i < n_aug; ++i)
    out.push_back({pool[static_cast<std::size_t>(i)], kind_of(pool[static_cast<std::size_t>(i)])});
  return out;
}

namespace detail {

template <typename T>
T sample_reflect(const Grid3<T>& g, Index z, Index y, Index x) {
  return g(reflect_index(z, g.d()), reflect_index(y, g.h()), reflect_index(x, g.w()));
}

template <typename T>
double sample_trilinear(const Grid3<T>& g, double z, double y, double x) {
  const Index z0 = static_cast<Index>(std::floor(z));
  const Index y0 = static_cast<Index>(std::floor(y));
  const Index x0 = static_cast<Index>(std::floor(x));
  const double fz = z - z0, fy = y - y0, fx = x - x0;
  double acc = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double wgt = (dz ? fz : 1 - fz) * (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
        if (wgt > 0) acc += wgt * static_cast<double>(sample_reflect(g, z0 + dz, y0 + dy, x0 + dx));
      }
  return acc;
}

template <typename T>
T sample_nearest(const Grid3<T>& g, double z, double y, double x) {
  return sample_reflect(g, static_cast<Index>(std::lround(z)), static_cast<Index>(std::lround(y)),
                        static_cast<Index>(std::lround(x)));
}

/// Resample image (trilinear) and label (nearest) through an affine map from
/// output voxel coordinates to input coordinates about the volume center.
template <typename T>
void warp(Grid3<T>& img, Grid3<std::int32_t>* lab, const Eigen::Matrix3d& out_to_in) {
  const Shape3 s = img.shape();
  const Eigen::Vector3d center(0.5 * (s.d - 1), 0.5 * (s.h - 1), 0.5 * (s.w - 1));
  Grid3<T> img_out(s.d, s.h, s.w);
  Grid3<std::int32_t> lab_out = lab ? Grid3<std::int32_t>(s.d, s.h, s.w) : Grid3<std::int32_t>();
  for (Index z = 0; z < s.d; ++z)
    for (Index y = 0; y < s.h; ++y)
      for (Index x = 0; x < s.w; ++x) {
        const Eigen::Vector3d p =
            out_to_in * (Eigen::Vector3d(z, y, x) - center) + center;
        img_out(z, y, x) = static_cast<T>(sample_trilinear(img, p[0], p[1], p[2]));
        if (lab) lab_out(z, y, x) = sample_nearest(*lab, p[0], p[1], p[2]);
      }
  img = std::move(img_out);
  if (lab) *lab = std::move(lab_out);
}

inline Eigen::Matrix3d rotation_matrix(double rz, double ry, double rx) {
  // Rotations about the depth, height and width axes, composed.
  Eigen::Matrix3d a = Eigen::Matrix3d::Identity();
  a(1, 1) = std::cos(rz); a(1, 2) = -std::sin(rz);
  a(2, 1) = std::sin(rz); a(2, 2) = std::cos(rz);
  Eigen::Matrix3d b = Eigen::Matrix3d::Identity();
  b(0, 0) = std::cos(ry); b(0, 2) = -std::sin(ry);
  b(2, 0) = std::sin(ry); b(2, 2) = std::cos(ry);
  Eigen::Matrix3d c = Eigen::Matrix3d::Identity();
  c(0, 0) = std::cos(rx); c(0, 1) = -std::sin(rx);
  c(1, 0) = std::sin(rx); c(1, 1) = std::cos(rx);
  return a * b * c;
}

/// Crop to `patch` at the given origin, reflect-padding where the source
/// extends past the volume.
template <typename T>
void crop_at(Grid3<T>& img, Grid3<std::int32_t>* lab, Shape3 patch, Index oz, Index oy, Index ox) {
  Grid3<T> img_out(patch.d, patch.h, patch.w);
  Grid3<std::int32_t> lab_out = lab ? Grid3<std::int32_t>(patch.d, patch.h, patch.w)
                                    : Grid3<std::int32_t>();
  for (Index z = 0; z < patch.d; ++z)
    for (Index y = 0; y < patch.h; ++y)
      for (Index x = 0; x < patch.w; ++x) {
        img_out(z, y, x) = sample_reflect(img, oz + z, oy + y, ox + x);
        if (lab)
          lab_out(z, y, x) = sample_reflect(*lab, oz + z, oy + y, ox + x);
      }
  img = std::move(img_out);
  if (lab) *lab = std::move(lab_out);
}

template <typename T>
void separable_blur(Grid3<T>& g, double sigma) {
  const Index radius = std::max<Index>(1, static_cast<Index>(std::ceil(2.0 * sigma)));
  ArrayX<double> kernel(2 * radius + 1);
  for (Index i = -radius; i <= radius; ++i)
    kernel[i + radius] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  kernel /= kernel.sum();

  const Shape3 s = g.shape();
  Grid3<T> tmp(s.d, s.h, s.w);
  auto pass = [&](Grid3<T>& src, Grid3<T>& dst, int axis) {
    const Index n = axis == 0 ? s.d : axis == 1 ? s.h : s.w;
    for (Index z = 0; z < s.d; ++z)
      for (Index y = 0; y < s.h; ++y)
        for (Index x = 0; x < s.w; ++x) {
          double acc = 0;
          for (Index i = -radius; i <= radius; ++i) {
            Index zz = z, yy = y, xx = x;
            (axis == 0 ? zz : axis == 1 ? yy : xx) =
                reflect_index((axis == 0 ? z : axis == 1 ? y : x) + i, n);
            acc += kernel[i + radius] * static_cast<double>(src(zz, yy, xx));
          }
          dst(z, y, x) = static_cast<T>(acc);
        }
  };
  pass(g, tmp, 0);
  pass(tmp, g, 1);
  pass(g, tmp, 2);
  g = std::move(tmp);
}

}  // namespace detail

/// Apply the sampled ops in order. Spatial ops move image and label through
/// identical geometry (trilinear vs nearest); voxel ops never touch the label.
template <typename T>
AugmentedPair<T> apply(const Volume<T>& v, const std::optional<LabelMap>& y,
                       const std::vector<AugmentationOp>& ops, const SvdaConfig& cfg, Rng& rng) {
  if (y && y->shape() != v.shape())
    throw std::invalid_argument("svda::apply: volume/label shape mismatch");

  Grid3<T> img = v.grid();
  Grid3<std::int32_t> lab = y ? y->grid() : Grid3<std::int32_t>();
  Grid3<std::int32_t>* lab_ptr = y ? &lab : nullptr;
  std::vector<AppliedOp> applied;

  for (const auto& op : ops) {
    switch (op.name) {
      case OpName::random_crop: {
        const Shape3 s = img.shape();
        // Reflect padding handles crops larger than the volume.
        const Index oz = s.d > cfg.patch.d ? rng.uniform_index(s.d - cfg.patch.d + 1)
                                           : -(cfg.patch.d - s.d) / 2;
        const Index oy = s.h > cfg.patch.h ? rng.uniform_index(s.h - cfg.patch.h + 1)
                                           : -(cfg.patch.h - s.h) / 2;
        const Index ox = s.w > cfg.patch.w ? rng.uniform_index(s.w - cfg.patch.w + 1)
                                           : -(cfg.patch.w - s.w) / 2;
        detail::crop_at(img, lab_ptr, cfg.patch, oz, oy, ox);
        applied.push_back({op.name, {static_cast<double>(oz), static_cast<double>(oy),
                                     static_cast<double>(ox)}});
        break;
      }
      case OpName::random_rotation: {
        const double rz = rng.uniform(cfg.rotation_deg[0].first, cfg.rotation_deg[0].second) *
                          M_PI / 180.0;
        const double ry = rng.uniform(cfg.rotation_deg[1].first, cfg.rotation_deg[1].second) *
                          M_PI / 180.0;
        const double rx = rng.uniform(cfg.rotation_deg[2].first, cfg.rotation_deg[2].second) *
                          M_PI / 180.0;
        // Output-to-input map is the inverse rotation.
        detail::warp(img, lab_ptr, detail::rotation_matrix(rz, ry, rx).transpose());
        applied.push_back({op.name, {rz, ry, rx}});
        break;
      }
      case OpName::random_scaling: {
        const double s = rng.uniform(cfg.scale_min, cfg.scale_max);
        detail::warp(img, lab_ptr, Eigen::Matrix3d::Identity() / s);
        applied.push_back({op.name, {s}});
        break;
      }
      case OpName::gaussian_blur: {
        const double sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
        detail::separable_blur(img, sigma);
        applied.push_back({op.name, {sigma}});
        break;
      }
      case OpName::brightness: {
        const double range =
            static_cast<double>(img.array().maxCoeff() - img.array().minCoeff());
        const double shift = rng.uniform(-cfg.brightness_frac, cfg.brightness_frac) * range;
        img.array() += static_cast<T>(shift);
        applied.push_back({op.name, {shift}});
        break;
      }
      case OpName::contrast: {
        const double f = rng.uniform(cfg.contrast_min, cfg.contrast_max);
        const T mean = img.array().mean();
        img.array() = mean + static_cast<T>(f) * (img.array() - mean);
        applied.push_back({op.name, {f}});
        break;
      }
      case OpName::gamma: {
        const double gam = rng.uniform(cfg.gamma_min, cfg.gamma_max);
        const T lo = img.array().minCoeff();
        const T hi = img.array().maxCoeff();
        if (hi > lo) {
          auto unit = ((img.array() - lo) / (hi - lo)).max(T(0)).min(T(1));
          img.array() = lo + (hi - lo) * unit.pow(static_cast<T>(gam));
        }
        applied.push_back({op.name, {gam}});
        break;
      }
    }
  }

  AugmentedPair<T> out;
  out.volume = Volume<T>(std::move(img), v.spacing());
  if (y) out.label = LabelMap(std::move(lab), y->num_classes());
  out.applied = std::move(applied);
  return out;
}

}  // namespace ad::svda
