#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ad {

using Index = Eigen::Index;

template <typename T>
using ArrayX = Eigen::Array<T, Eigen::Dynamic, 1>;

template <typename T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

struct Shape3 {
  Index d = 0, h = 0, w = 0;

  Index count() const { return d * h * w; }
  bool operator==(const Shape3&) const = default;
};

struct Shape4 {
  Index c = 0, d = 0, h = 0, w = 0;

  Index count() const { return c * d * h * w; }
  Index voxels() const { return d * h * w; }
  Shape3 spatial() const { return {d, h, w}; }
  bool operator==(const Shape4&) const = default;
};

/// Mirror an index into [0, n); edge samples are repeated (-1 -> 0, n -> n-1).
inline Index reflect_index(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

/// Dense rank-3 grid indexed (depth, height, width), row-major within the
/// flat Eigen array: flat = (z * h + y) * w + x.
template <typename T>
class Grid3 {
 public:
  Grid3() = default;
  Grid3(Index d, Index h, Index w) : shape_{d, h, w} {
    require_positive(shape_);
    v_ = ArrayX<T>::Zero(shape_.count());
  }
  Grid3(Shape3 s, ArrayX<T> values) : shape_(s), v_(std::move(values)) {
    require_positive(shape_);
    if (v_.size() != shape_.count())
      throw std::invalid_argument("Grid3: value count does not match shape");
  }

  const Shape3& shape() const { return shape_; }
  Index d() const { return shape_.d; }
  Index h() const { return shape_.h; }
  Index w() const { return shape_.w; }
  Index size() const { return v_.size(); }

  T& operator()(Index z, Index y, Index x) { return v_[(z * shape_.h + y) * shape_.w + x]; }
  const T& operator()(Index z, Index y, Index x) const {
    return v_[(z * shape_.h + y) * shape_.w + x];
  }

  ArrayX<T>& array() { return v_; }
  const ArrayX<T>& array() const { return v_; }

  bool all_finite() const {
    if constexpr (std::is_floating_point_v<T>)
      return v_.isFinite().all();
    else
      return true;
  }

 private:
  static void require_positive(const Shape3& s) {
    if (s.d < 1 || s.h < 1 || s.w < 1)
      throw std::invalid_argument("Grid3: dimensions must be >= 1");
  }

  Shape3 shape_{};
  ArrayX<T> v_;
};

/// Dense rank-4 grid (channels, depth, height, width), channel-major:
/// flat = ((c * d + z) * h + y) * w + x, so each channel is a contiguous
/// plane of `voxels()` entries.
template <typename T>
class Grid4 {
 public:
  Grid4() = default;
  Grid4(Index c, Index d, Index h, Index w) : shape_{c, d, h, w} {
    require_positive(shape_);
    v_ = ArrayX<T>::Zero(shape_.count());
  }
  Grid4(Shape4 s, ArrayX<T> values) : shape_(s), v_(std::move(values)) {
    require_positive(shape_);
    if (v_.size() != shape_.count())
      throw std::invalid_argument("Grid4: value count does not match shape");
  }

  const Shape4& shape() const { return shape_; }
  Index c() const { return shape_.c; }
  Index d() const { return shape_.d; }
  Index h() const { return shape_.h; }
  Index w() const { return shape_.w; }
  Index size() const { return v_.size(); }
  Index voxels() const { return shape_.voxels(); }

  T& operator()(Index c, Index z, Index y, Index x) {
    return v_[((c * shape_.d + z) * shape_.h + y) * shape_.w + x];
  }
  const T& operator()(Index c, Index z, Index y, Index x) const {
    return v_[((c * shape_.d + z) * shape_.h + y) * shape_.w + x];
  }

  Eigen::Map<ArrayX<T>> channel(Index c) {
    return Eigen::Map<ArrayX<T>>(v_.data() + c * voxels(), voxels());
  }
  Eigen::Map<const ArrayX<T>> channel(Index c) const {
    return Eigen::Map<const ArrayX<T>>(v_.data() + c * voxels(), voxels());
  }

  /// Zero-copy matrix view (voxels x channels); column c is channel plane c.
  Eigen::Map<MatrixX<T>> as_matrix() {
    return Eigen::Map<MatrixX<T>>(v_.data(), voxels(), shape_.c);
  }
  Eigen::Map<const MatrixX<T>> as_matrix() const {
    return Eigen::Map<const MatrixX<T>>(v_.data(), voxels(), shape_.c);
  }

  ArrayX<T>& array() { return v_; }
  const ArrayX<T>& array() const { return v_; }

  bool all_finite() const {
    if constexpr (std::is_floating_point_v<T>)
      return v_.isFinite().all();
    else
      return true;
  }

 private:
  static void require_positive(const Shape4& s) {
    if (s.c < 1 || s.d < 1 || s.h < 1 || s.w < 1)
      throw std::invalid_argument("Grid4: dimensions must be >= 1");
  }

  Shape4 shape_{};
  ArrayX<T> v_;
};

template <typename T>
Grid4<T> concat_channels(const Grid4<T>& a, const Grid4<T>& b) {
  if (a.shape().spatial() != b.shape().spatial())
    throw std::invalid_argument("concat_channels: spatial shapes differ");
  Grid4<T> out(a.c() + b.c(), a.d(), a.h(), a.w());
  out.array().head(a.size()) = a.array();
  out.array().tail(b.size()) = b.array();
  return out;
}

}  // namespace ad
