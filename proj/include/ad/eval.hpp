#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ad/core.hpp"
#include "ad/network.hpp"

namespace ad::eval {

/// Per-foreground-class metrics. Surface metrics are NaN (and excluded from
/// means) when either mask is empty; dice is 1 when both masks are empty and
/// 0 when exactly one is.
struct ClassMetrics {
  double dice = 0;
  double jaccard = 0;
  double asd = std::numeric_limits<double>::quiet_NaN();
  double hd95 = std::numeric_limits<double>::quiet_NaN();
  bool surface_defined = false;
};

struct MetricReport {
  std::vector<ClassMetrics> per_class;  // classes 1..K-1
  int surface_undefined_count = 0;

  double mean_dice() const {
    double acc = 0;
    for (const auto& m : per_class) acc += m.dice;
    return per_class.empty() ? 0 : acc / static_cast<double>(per_class.size());
  }
  double mean_jaccard() const {
    double acc = 0;
    for (const auto& m : per_class) acc += m.jaccard;
    return per_class.empty() ? 0 : acc / static_cast<double>(per_class.size());
  }
  double mean_asd() const {
    double acc = 0;
    int n = 0;
    for (const auto& m : per_class)
      if (m.surface_defined) {
        acc += m.asd;
        ++n;
      }
    return n ? acc / n : std::numeric_limits<double>::quiet_NaN();
  }
  double mean_hd95() const {
    double acc = 0;
    int n = 0;
    for (const auto& m : per_class)
      if (m.surface_defined) {
        acc += m.hd95;
        ++n;
      }
    return n ? acc / n : std::numeric_limits<double>::quiet_NaN();
  }
};

inline double dice_score(const LabelMap& pred, const LabelMap& gt, int k) {
  if (pred.shape() != gt.shape()) throw std::invalid_argument("dice_score: shape mismatch");
  const auto& p = pred.grid().array();
  const auto& g = gt.grid().array();
  const auto p_k = (p == k);
  const auto g_k = (g == k);
  const double np = static_cast<double>(p_k.count());
  const double ng = static_cast<double>(g_k.count());
  if (np == 0 && ng == 0) return 1.0;
  const double inter = static_cast<double>((p_k && g_k).count());
  return 2.0 * inter / (np + ng);
}

inline double jaccard_score(const LabelMap& pred, const LabelMap& gt, int k) {
  const double d = dice_score(pred, gt, k);
  return d / (2.0 - d);  // j = d / (2 - d) <=> d = 2j/(1+j)
}

namespace detail {

/// Surface voxels: mask voxels with at least one six-connected background
/// neighbor; voxels on the volume border count as surface.
inline std::vector<Index> surface_voxels(const Grid3<std::int32_t>& g, int k) {
  const Shape3 s = g.shape();
  std::vector<Index> out;
  for (Index z = 0; z < s.d; ++z)
    for (Index y = 0; y < s.h; ++y)
      for (Index x = 0; x < s.w; ++x) {
        if (g(z, y, x) != k) continue;
        const bool border = z == 0 || z == s.d - 1 || y == 0 || y == s.h - 1 || x == 0 ||
                            x == s.w - 1;
        bool exposed = border;
        if (!exposed)
          exposed = g(z - 1, y, x) != k || g(z + 1, y, x) != k || g(z, y - 1, x) != k ||
                    g(z, y + 1, x) != k || g(z, y, x - 1) != k || g(z, y, x + 1) != k;
        if (exposed) out.push_back((z * s.h + y) * s.w + x);
      }
  return out;
}

/// Felzenszwalb 1D lower envelope for f(x) = min_p w (x-p)^2 + cost(p).
inline void edt_1d(std::vector<double>& f, double w, std::vector<double>& scratch_z,
                   std::vector<int>& scratch_v) {
  const int n = static_cast<int>(f.size());
  auto& z = scratch_z;
  auto& v = scratch_v;
  z.assign(static_cast<std::size_t>(n) + 1, 0);
  v.assign(static_cast<std::size_t>(n), 0);
  std::vector<double> out(static_cast<std::size_t>(n));
  int kk = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto sect = [&](int p, int q) {
    return ((f[static_cast<std::size_t>(q)] + w * q * q) -
            (f[static_cast<std::size_t>(p)] + w * p * p)) /
           (2.0 * w * (q - p));
  };
  for (int q = 1; q < n; ++q) {
    if (f[static_cast<std::size_t>(q)] == std::numeric_limits<double>::infinity()) continue;
    if (f[static_cast<std::size_t>(v[static_cast<std::size_t>(kk)])] ==
        std::numeric_limits<double>::infinity()) {
      v[static_cast<std::size_t>(kk)] = q;
      continue;
    }
    double s = sect(v[static_cast<std::size_t>(kk)], q);
    while (kk > 0 && s <= z[static_cast<std::size_t>(kk)]) {
      --kk;
      s = sect(v[static_cast<std::size_t>(kk)], q);
    }
    ++kk;
    v[static_cast<std::size_t>(kk)] = q;
    z[static_cast<std::size_t>(kk)] = s;
    z[static_cast<std::size_t>(kk) + 1] = std::numeric_limits<double>::infinity();
  }
  kk = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(kk) + 1] < q) ++kk;
    const int p = v[static_cast<std::size_t>(kk)];
    out[static_cast<std::size_t>(q)] =
        f[static_cast<std::size_t>(p)] == std::numeric_limits<double>::infinity()
            ? std::numeric_limits<double>::infinity()
            : w * (q - p) * (q - p) + f[static_cast<std::size_t>(p)];
  }
  f = std::move(out);
}

/// Exact squared Euclidean distance (spacing-scaled) from every voxel to the
/// given seed set.
inline std::vector<double> edt_squared(const Shape3& s, const std::vector<Index>& seeds,
                                       const Eigen::Vector3d& spacing) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(static_cast<std::size_t>(s.count()), kInf);
  for (Index i : seeds) dist[static_cast<std::size_t>(i)] = 0.0;

  std::vector<double> line;
  std::vector<double> sz;
  std::vector<int> sv;
  // Along width.
  line.resize(static_cast<std::size_t>(s.w));
  for (Index z = 0; z < s.d; ++z)
    for (Index y = 0; y < s.h; ++y) {
      const Index base = (z * s.h + y) * s.w;
      for (Index x = 0; x < s.w; ++x) line[static_cast<std::size_t>(x)] = dist[static_cast<std::size_t>(base + x)];
      edt_1d(line, spacing[2] * spacing[2], sz, sv);
      for (Index x = 0; x < s.w; ++x) dist[static_cast<std::size_t>(base + x)] = line[static_cast<std::size_t>(x)];
    }
  // Along height.
  line.resize(static_cast<std::size_t>(s.h));
  for (Index z = 0; z < s.d; ++z)
    for (Index x = 0; x < s.w; ++x) {
      for (Index y = 0; y < s.h; ++y)
        line[static_cast<std::size_t>(y)] = dist[static_cast<std::size_t>((z * s.h + y) * s.w + x)];
      edt_1d(line, spacing[1] * spacing[1], sz, sv);
      for (Index y = 0; y < s.h; ++y)
        dist[static_cast<std::size_t>((z * s.h + y) * s.w + x)] = line[static_cast<std::size_t>(y)];
    }
  // Along depth.
  line.resize(static_cast<std::size_t>(s.d));
  for (Index y = 0; y < s.h; ++y)
    for (Index x = 0; x < s.w; ++x) {
      for (Index z = 0; z < s.d; ++z)
        line[static_cast<std::size_t>(z)] = dist[static_cast<std::size_t>((z * s.h + y) * s.w + x)];
      edt_1d(line, spacing[0] * spacing[0], sz, sv);
      for (Index z = 0; z < s.d; ++z)
        dist[static_cast<std::size_t>((z * s.h + y) * s.w + x)] = line[static_cast<std::size_t>(z)];
    }
  return dist;
}

/// Percentile with linear interpolation on the sorted values.
inline double percentile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

}  // namespace detail

/// Symmetric surface distances for class k: (ASD, HD95) over the combined
/// multiset of surface-to-surface distances, in millimeters. Throws when a
/// mask is empty; callers decide the sentinel policy.
inline std::pair<double, double> surface_distances(const LabelMap& pred, const LabelMap& gt, int k,
                                                   const Eigen::Vector3d& spacing) {
  if (pred.shape() != gt.shape())
    throw std::invalid_argument("surface_distances: shape mismatch");
  const auto sp = detail::surface_voxels(pred.grid(), k);
  const auto sg = detail::surface_voxels(gt.grid(), k);
  if (sp.empty() || sg.empty())
    throw std::invalid_argument("surface_distances: empty mask for class " + std::to_string(k));

  const Shape3 s = pred.shape();
  const auto dist_to_g = detail::edt_squared(s, sg, spacing);
  const auto dist_to_p = detail::edt_squared(s, sp, spacing);

  std::vector<double> all;
  all.reserve(sp.size() + sg.size());
  for (Index i : sp) all.push_back(std::sqrt(dist_to_g[static_cast<std::size_t>(i)]));
  for (Index i : sg) all.push_back(std::sqrt(dist_to_p[static_cast<std::size_t>(i)]));

  double mean = 0;
  for (double d : all) mean += d;
  mean /= static_cast<double>(all.size());
  return {mean, detail::percentile(all, 95.0)};
}

/// Full report over foreground classes 1..K-1.
inline MetricReport evaluate(const LabelMap& pred, const LabelMap& gt,
                             const Eigen::Vector3d& spacing = Eigen::Vector3d::Ones()) {
  if (pred.num_classes() != gt.num_classes())
    throw std::invalid_argument("evaluate: class count mismatch");
  MetricReport report;
  for (int k = 1; k < gt.num_classes(); ++k) {
    ClassMetrics m;
    m.dice = dice_score(pred, gt, k);
    m.jaccard = jaccard_score(pred, gt, k);
    try {
      const auto [asd, hd95] = surface_distances(pred, gt, k, spacing);
      m.asd = asd;
      m.hd95 = hd95;
      m.surface_defined = true;
    } catch (const std::invalid_argument&) {
      report.surface_undefined_count++;
    }
    report.per_class.push_back(m);
  }
  return report;
}

/// Whole-volume inference through the plain encoder and the theta decoder:
/// Gaussian-weighted overlapping tiles, reflect-padded borders, simplex out.
template <typename T>
ProbMap<T> sliding_window_infer(const net::VNet<T>& model, const Volume<T>& v, Shape3 patch,
                                double overlap = 0.5) {
  if (overlap < 0 || overlap >= 1)
    throw std::invalid_argument("sliding_window_infer: overlap must be in [0,1)");
  const Shape3 orig = v.shape();
  const Shape3 padded{std::max(orig.d, patch.d), std::max(orig.h, patch.h),
                      std::max(orig.w, patch.w)};

  Grid3<T> src(padded.d, padded.h, padded.w);
  for (Index z = 0; z < padded.d; ++z)
    for (Index y = 0; y < padded.h; ++y)
      for (Index x = 0; x < padded.w; ++x)
        src(z, y, x) = v.grid()(reflect_index(z, orig.d), reflect_index(y, orig.h),
                                reflect_index(x, orig.w));

  auto tile_starts = [&](Index extent, Index p) {
    const Index stride = std::max<Index>(1, static_cast<Index>(std::lround(
                                                static_cast<double>(p) * (1.0 - overlap))));
    std::vector<Index> starts;
    for (Index s0 = 0;; s0 += stride) {
      starts.push_back(std::min(s0, extent - p));
      if (s0 >= extent - p) break;
    }
    return starts;
  };
  if (patch.d > padded.d || patch.h > padded.h || patch.w > padded.w)
    throw std::invalid_argument("sliding_window_infer: patch exceeds padded volume");

  // Separable Gaussian importance weights, sigma = patch/8.
  auto axis_weights = [](Index p) {
    ArrayX<T> w(p);
    const double sigma = std::max(1.0, static_cast<double>(p) / 8.0);
    const double c = 0.5 * static_cast<double>(p - 1);
    for (Index i = 0; i < p; ++i)
      w[i] = static_cast<T>(std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma)));
    return w;
  };
  const auto wd = axis_weights(patch.d);
  const auto wh = axis_weights(patch.h);
  const auto ww = axis_weights(patch.w);

  const int k = model.cfg.num_classes;
  Grid4<T> acc(k, padded.d, padded.h, padded.w);
  Grid3<T> norm(padded.d, padded.h, padded.w);

  for (Index sz : tile_starts(padded.d, patch.d))
    for (Index sy : tile_starts(padded.h, patch.h))
      for (Index sx : tile_starts(padded.w, patch.w)) {
        Grid4<T> tile(1, patch.d, patch.h, patch.w);
        for (Index z = 0; z < patch.d; ++z)
          for (Index y = 0; y < patch.h; ++y)
            for (Index x = 0; x < patch.w; ++x)
              tile(0, z, y, x) = src(sz + z, sy + y, sx + x);
        const auto probs = softmax_channels(
            net::decode(model, net::DecoderId::theta, net::encode_plain(model, tile)));
        for (Index z = 0; z < patch.d; ++z)
          for (Index y = 0; y < patch.h; ++y)
            for (Index x = 0; x < patch.w; ++x) {
              const T w = wd[z] * wh[y] * ww[x];
              norm(sz + z, sy + y, sx + x) += w;
              for (Index c = 0; c < k; ++c)
                acc(c, sz + z, sy + y, sx + x) += w * probs(c, z, y, x);
            }
      }

  Grid4<T> out(k, orig.d, orig.h, orig.w);
  for (Index c = 0; c < k; ++c)
    for (Index z = 0; z < orig.d; ++z)
      for (Index y = 0; y < orig.h; ++y)
        for (Index x = 0; x < orig.w; ++x)
          out(c, z, y, x) = acc(c, z, y, x) / norm(z, y, x);
  return ProbMap<T>(std::move(out), ProbKind::simplex);
}

}  // namespace ad::eval
