#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ad/rng.hpp"
#include "ad/tensor.hpp"

namespace ad::nn {

/// One flat parameter group: values plus a same-shaped gradient accumulator,
/// addressed through named entries. Keeping groups flat makes the optimizer
/// step, the EMA rule and checkpoint IO elementwise over whole arrays.
template <typename T>
struct ParamPack {
  struct Entry {
    std::string name;
    Index offset = 0;
    Index size = 0;
  };

  ArrayX<T> w;
  ArrayX<T> g;
  std::vector<Entry> entries;

  int add(const std::string& name, Index size) {
    entries.push_back({name, w.size(), size});
    ArrayX<T> grown(w.size() + size);
    grown.head(w.size()) = w;
    grown.tail(size).setZero();
    w = std::move(grown);
    return static_cast<int>(entries.size()) - 1;
  }

  void finish() { g = ArrayX<T>::Zero(w.size()); }
  void zero_grad() { g.setZero(); }

  Eigen::Map<ArrayX<T>> view(int idx) {
    const auto& e = entries[static_cast<std::size_t>(idx)];
    return Eigen::Map<ArrayX<T>>(w.data() + e.offset, e.size);
  }
  Eigen::Map<const ArrayX<T>> view(int idx) const {
    const auto& e = entries[static_cast<std::size_t>(idx)];
    return Eigen::Map<const ArrayX<T>>(w.data() + e.offset, e.size);
  }
  Eigen::Map<ArrayX<T>> grad(int idx) {
    const auto& e = entries[static_cast<std::size_t>(idx)];
    return Eigen::Map<ArrayX<T>>(g.data() + e.offset, e.size);
  }

  bool layout_matches(const ParamPack& other) const {
    if (entries.size() != other.entries.size() || w.size() != other.w.size()) return false;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name != other.entries[i].name || entries[i].size != other.entries[i].size)
        return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// conv3d: im2col + GEMM. Weight entry layout is a (k^3*cin, cout)
// column-major matrix whose row index is ci*k^3 + (a*k + b)*k + c for kernel
// offset (a, b, c); the optional bias entry is length cout.
// ---------------------------------------------------------------------------

struct ConvSpec {
  Index cin = 0, cout = 0;
  Index kernel = 3, stride = 1, pad = 1;
  bool bias = false;

  Index weight_count() const { return kernel * kernel * kernel * cin * cout; }
  Index out_dim(Index in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

template <typename T>
struct ConvCache {
  MatrixX<T> cols;  // (out voxels, k^3*cin)
  Shape4 in_shape;
};

namespace detail {

template <typename T>
void im2col(const Grid4<T>& in, const ConvSpec& spec, MatrixX<T>& cols, Shape3 out_sp) {
  const Index k = spec.kernel;
  const Index n = out_sp.count();
  cols.resize(n, k * k * k * spec.cin);
  for (Index ci = 0; ci < spec.cin; ++ci)
    for (Index a = 0; a < k; ++a)
      for (Index b = 0; b < k; ++b)
        for (Index c = 0; c < k; ++c) {
          const Index col = ((ci * k + a) * k + b) * k + c;
          T* dst = cols.col(col).data();
          for (Index z = 0; z < out_sp.d; ++z) {
            const Index iz = z * spec.stride + a - spec.pad;
            for (Index y = 0; y < out_sp.h; ++y) {
              const Index iy = y * spec.stride + b - spec.pad;
              for (Index x = 0; x < out_sp.w; ++x) {
                const Index ix = x * spec.stride + c - spec.pad;
                const bool inside = iz >= 0 && iz < in.d() && iy >= 0 && iy < in.h() &&
                                    ix >= 0 && ix < in.w();
                *dst++ = inside ? in(ci, iz, iy, ix) : T(0);
              }
            }
          }
        }
}

template <typename T>
void col2im_add(const MatrixX<T>& dcols, const ConvSpec& spec, Shape3 out_sp, Grid4<T>& din) {
  const Index k = spec.kernel;
  for (Index ci = 0; ci < spec.cin; ++ci)
    for (Index a = 0; a < k; ++a)
      for (Index b = 0; b < k; ++b)
        for (Index c = 0; c < k; ++c) {
          const Index col = ((ci * k + a) * k + b) * k + c;
          const T* src = dcols.col(col).data();
          for (Index z = 0; z < out_sp.d; ++z) {
            const Index iz = z * spec.stride + a - spec.pad;
            for (Index y = 0; y < out_sp.h; ++y) {
              const Index iy = y * spec.stride + b - spec.pad;
              for (Index x = 0; x < out_sp.w; ++x) {
                const Index ix = x * spec.stride + c - spec.pad;
                const bool inside = iz >= 0 && iz < din.d() && iy >= 0 && iy < din.h() &&
                                    ix >= 0 && ix < din.w();
                if (inside) din(ci, iz, iy, ix) += *src;
                ++src;
              }
            }
          }
        }
}

}  // namespace detail

template <typename T>
Grid4<T> conv3d_forward(const Grid4<T>& in, const ConvSpec& spec, const T* weights,
                        const T* bias,  // nullptr when spec.bias is false
                        ConvCache<T>* cache) {
  if (in.c() != spec.cin) throw std::invalid_argument("conv3d: input channel mismatch");
  const Shape3 out_sp{spec.out_dim(in.d()), spec.out_dim(in.h()), spec.out_dim(in.w())};
  MatrixX<T> local_cols;
  MatrixX<T>& cols = cache ? cache->cols : local_cols;
  detail::im2col(in, spec, cols, out_sp);
  if (cache) cache->in_shape = in.shape();

  Eigen::Map<const MatrixX<T>> wm(weights, spec.kernel * spec.kernel * spec.kernel * spec.cin,
                                  spec.cout);
  Grid4<T> out(spec.cout, out_sp.d, out_sp.h, out_sp.w);
  out.as_matrix().noalias() = cols * wm;
  if (spec.bias && bias)
    for (Index co = 0; co < spec.cout; ++co) out.channel(co) += bias[co];
  return out;
}

template <typename T>
Grid4<T> conv3d_backward(const Grid4<T>& dout, const ConvSpec& spec, const ConvCache<T>& cache,
                         const T* weights, T* dweights, T* dbias) {
  const Index krows = spec.kernel * spec.kernel * spec.kernel * spec.cin;
  Eigen::Map<const MatrixX<T>> wm(weights, krows, spec.cout);
  Eigen::Map<MatrixX<T>> dwm(dweights, krows, spec.cout);
  const auto dout_m = dout.as_matrix();

  dwm.noalias() += cache.cols.transpose() * dout_m;
  if (spec.bias && dbias)
    for (Index co = 0; co < spec.cout; ++co) dbias[co] += dout_m.col(co).sum();

  MatrixX<T> dcols(dout_m.rows(), krows);
  dcols.noalias() = dout_m * wm.transpose();
  Grid4<T> din(cache.in_shape.c, cache.in_shape.d, cache.in_shape.h, cache.in_shape.w);
  detail::col2im_add(dcols, spec, dout.shape().spatial(), din);
  return din;
}

// ---------------------------------------------------------------------------
// Instance normalization: per-channel over the spatial voxels of one sample.
// Single-voxel planes pass through as gamma*x + beta (nothing to normalize).
// ---------------------------------------------------------------------------

template <typename T>
struct NormCache {
  ArrayX<T> xhat;    // normalized activations, full grid
  ArrayX<T> invstd;  // per channel
};

template <typename T>
Grid4<T> instance_norm_forward(const Grid4<T>& in, const T* gamma, const T* beta,
                               NormCache<T>* cache) {
  constexpr T kEps = static_cast<T>(1e-5);
  const Index vox = in.voxels();
  Grid4<T> out(in.shape().c, in.d(), in.h(), in.w());
  if (cache) {
    cache->xhat.resize(in.size());
    cache->invstd.resize(in.c());
  }
  for (Index c = 0; c < in.c(); ++c) {
    auto plane = in.channel(c);
    if (vox == 1) {
      out.channel(c) = gamma[c] * plane + beta[c];
      if (cache) {
        cache->xhat.segment(c * vox, vox) = plane;
        cache->invstd[c] = T(1);
      }
      continue;
    }
    const T mean = plane.mean();
    const T var = (plane - mean).square().mean();
    const T invstd = T(1) / std::sqrt(var + kEps);
    ArrayX<T> xhat = (plane - mean) * invstd;
    out.channel(c) = gamma[c] * xhat + beta[c];
    if (cache) {
      cache->xhat.segment(c * vox, vox) = xhat;
      cache->invstd[c] = invstd;
    }
  }
  return out;
}

template <typename T>
Grid4<T> instance_norm_backward(const Grid4<T>& dout, const NormCache<T>& cache, const T* gamma,
                                T* dgamma, T* dbeta) {
  const Index vox = dout.voxels();
  Grid4<T> din(dout.shape().c, dout.d(), dout.h(), dout.w());
  for (Index c = 0; c < dout.c(); ++c) {
    auto dy = dout.channel(c);
    const auto xhat = cache.xhat.segment(c * vox, vox);
    dgamma[c] += (dy * xhat).sum();
    dbeta[c] += dy.sum();
    if (vox == 1) {
      din.channel(c) = gamma[c] * dy;
      continue;
    }
    const T n = static_cast<T>(vox);
    const T sum_dy = dy.sum();
    const T sum_dy_xhat = (dy * xhat).sum();
    din.channel(c) =
        (gamma[c] * cache.invstd[c] / n) * (n * dy - sum_dy - xhat * sum_dy_xhat);
  }
  return din;
}

// ---------------------------------------------------------------------------
// Leaky ReLU with slope 0.01.
// ---------------------------------------------------------------------------

template <typename T>
Grid4<T> leaky_relu_forward(const Grid4<T>& in, Grid4<T>* cache_preact) {
  constexpr T kSlope = static_cast<T>(0.01);
  if (cache_preact) *cache_preact = in;
  Grid4<T> out(in.shape(), (in.array() > T(0)).select(in.array(), kSlope * in.array()));
  return out;
}

template <typename T>
Grid4<T> leaky_relu_backward(const Grid4<T>& dout, const Grid4<T>& preact) {
  constexpr T kSlope = static_cast<T>(0.01);
  return Grid4<T>(dout.shape(),
                  (preact.array() > T(0)).select(dout.array(), kSlope * dout.array()));
}

// ---------------------------------------------------------------------------
// Nearest-neighbor 2x upsampling and its sum-pooling adjoint.
// ---------------------------------------------------------------------------

template <typename T>
Grid4<T> upsample2_forward(const Grid4<T>& in) {
  Grid4<T> out(in.c(), in.d() * 2, in.h() * 2, in.w() * 2);
  for (Index c = 0; c < in.c(); ++c)
    for (Index z = 0; z < out.d(); ++z)
      for (Index y = 0; y < out.h(); ++y)
        for (Index x = 0; x < out.w(); ++x)
          out(c, z, y, x) = in(c, z / 2, y / 2, x / 2);
  return out;
}

template <typename T>
Grid4<T> upsample2_backward(const Grid4<T>& dout) {
  Grid4<T> din(dout.c(), dout.d() / 2, dout.h() / 2, dout.w() / 2);
  for (Index c = 0; c < dout.c(); ++c)
    for (Index z = 0; z < dout.d(); ++z)
      for (Index y = 0; y < dout.h(); ++y)
        for (Index x = 0; x < dout.w(); ++x)
          din(c, z / 2, y / 2, x / 2) += dout(c, z, y, x);
  return din;
}

/// He-normal initialization for a conv weight entry; biases start at zero.
template <typename T>
void he_init(T* w, Index n, Index fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < n; ++i) w[i] = static_cast<T>(sd * rng.normal());
}

}  // namespace ad::nn
