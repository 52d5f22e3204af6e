#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ad/tensor.hpp"

namespace ad {

/// Rank-3 intensity grid with voxel spacing in millimeters.
template <typename T>
class Volume {
 public:
  Volume() = default;
  Volume(Grid3<T> grid, Eigen::Vector3d spacing = Eigen::Vector3d::Ones())
      : grid_(std::move(grid)), spacing_(std::move(spacing)) {
    if (!grid_.all_finite()) throw std::invalid_argument("Volume: non-finite intensity");
    if ((spacing_.array() <= 0.0).any())
      throw std::invalid_argument("Volume: spacing components must be > 0");
  }

  const Grid3<T>& grid() const { return grid_; }
  Grid3<T>& grid() { return grid_; }
  const Eigen::Vector3d& spacing() const { return spacing_; }
  const Shape3& shape() const { return grid_.shape(); }

 private:
  Grid3<T> grid_;
  Eigen::Vector3d spacing_ = Eigen::Vector3d::Ones();
};

/// Rank-3 integer class grid, values in [0, num_classes).
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(Grid3<std::int32_t> grid, int num_classes)
      : grid_(std::move(grid)), num_classes_(num_classes) {
    if (num_classes_ < 1) throw std::invalid_argument("LabelMap: num_classes must be >= 1");
    if ((grid_.array() < 0).any() || (grid_.array() >= num_classes_).any())
      throw std::invalid_argument("LabelMap: voxel value outside [0, num_classes)");
  }

  const Grid3<std::int32_t>& grid() const { return grid_; }
  int num_classes() const { return num_classes_; }
  const Shape3& shape() const { return grid_.shape(); }

 private:
  Grid3<std::int32_t> grid_;
  int num_classes_ = 0;
};

/// Rank-4 {0,1} grid (K, D, H, W) whose channels partition every voxel.
template <typename T>
class OneHot {
 public:
  OneHot() = default;
  explicit OneHot(Grid4<T> grid) : grid_(std::move(grid)) {
    if (!grid_.all_finite()) throw std::invalid_argument("OneHot: non-finite entry");
    const Index vox = grid_.voxels();
    ArrayX<T> sums = ArrayX<T>::Zero(vox);
    for (Index c = 0; c < grid_.c(); ++c) {
      auto plane = grid_.channel(c);
      if (((plane != T(0)) && (plane != T(1))).any())
        throw std::invalid_argument("OneHot: entries must be 0 or 1");
      sums += plane;
    }
    if ((sums != T(1)).any())
      throw std::invalid_argument("OneHot: per-voxel channel sum must be exactly 1");
  }

  const Grid4<T>& grid() const { return grid_; }
  Index num_classes() const { return grid_.c(); }

 private:
  Grid4<T> grid_;
};

enum class ProbKind { logits, simplex };

/// Rank-4 real grid (K, D, H, W); either unnormalized logits or a per-voxel
/// simplex. Simplex sums are checked to 1e-5, accommodating rounding from
/// blur/softmax chains.
template <typename T>
class ProbMap {
 public:
  static constexpr double kSimplexTol = 1e-5;

  ProbMap() = default;
  ProbMap(Grid4<T> grid, ProbKind kind) : grid_(std::move(grid)), kind_(kind) {
    if (!grid_.all_finite()) throw std::invalid_argument("ProbMap: non-finite entry");
    if (kind_ == ProbKind::simplex) {
      const Index vox = grid_.voxels();
      ArrayX<T> sums = ArrayX<T>::Zero(vox);
      for (Index c = 0; c < grid_.c(); ++c) {
        auto plane = grid_.channel(c);
        if ((plane < T(-kSimplexTol)).any() || (plane > T(1.0 + kSimplexTol)).any())
          throw std::invalid_argument("ProbMap: simplex entry outside [0, 1]");
        sums += plane;
      }
      if ((sums < T(1.0 - kSimplexTol)).any() || (sums > T(1.0 + kSimplexTol)).any())
        throw std::invalid_argument("ProbMap: per-voxel simplex sum must be 1");
    }
  }

  const Grid4<T>& grid() const { return grid_; }
  ProbKind kind() const { return kind_; }
  Index num_classes() const { return grid_.c(); }

 private:
  Grid4<T> grid_;
  ProbKind kind_ = ProbKind::logits;
};

enum class Task { SSL, IBSSL, UDA, SemiDG };

inline std::string to_string(Task t) {
  switch (t) {
    case Task::SSL: return "SSL";
    case Task::IBSSL: return "IBSSL";
    case Task::UDA: return "UDA";
    case Task::SemiDG: return "SemiDG";
  }
  return "SSL";
}

inline Task task_from_string(const std::string& s) {
  if (s == "SSL") return Task::SSL;
  if (s == "IBSSL") return Task::IBSSL;
  if (s == "UDA") return Task::UDA;
  if (s == "SemiDG") return Task::SemiDG;
  throw std::invalid_argument("unknown task: " + s);
}

/// Experiment hyper-parameters. Defaults follow the per-dataset presets in
/// cli/config; patch dims must allow the encoder's four down-samplings.
struct TaskConfig {
  Task task = Task::SSL;
  Shape3 patch_size{16, 16, 16};
  double base_lr = 0.1;
  int batch_size = 2;
  int feature_size = 8;     // F
  int num_classes = 3;      // K
  int t_diffusion = 100;    // T
  int n_aug = 3;
  int tau = 50;
  double alpha_diff = 0.2;
  double mu_unsup = 10.0;
  double w_ema = 0.99;
  int max_iterations = 200;
  std::uint64_t seed = 1;

  // Artifact knobs with fixed defaults; not part of the per-dataset tables.
  int ddim_steps = 10;
  double ramp_fraction = 0.4;
  int validate_every = 100;

  void validate() const {
    if (patch_size.d < 1 || patch_size.h < 1 || patch_size.w < 1)
      throw std::invalid_argument("TaskConfig: patch dims must be >= 1");
    if (patch_size.d % 16 || patch_size.h % 16 || patch_size.w % 16)
      throw std::invalid_argument("TaskConfig: patch dims must be divisible by 16");
    if (base_lr <= 0) throw std::invalid_argument("TaskConfig: base_lr must be > 0");
    if (batch_size < 1) throw std::invalid_argument("TaskConfig: batch_size must be >= 1");
    if (feature_size < 1) throw std::invalid_argument("TaskConfig: feature_size must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("TaskConfig: num_classes must be >= 2");
    if (t_diffusion < 1) throw std::invalid_argument("TaskConfig: t_diffusion must be >= 1");
    if (n_aug < 1 || n_aug > 7) throw std::invalid_argument("TaskConfig: n_aug must be in [1,7]");
    if (tau < 1) throw std::invalid_argument("TaskConfig: tau must be >= 1");
    if (alpha_diff <= 0) throw std::invalid_argument("TaskConfig: alpha_diff must be > 0");
    if (mu_unsup <= 0) throw std::invalid_argument("TaskConfig: mu_unsup must be > 0");
    if (w_ema <= 0 || w_ema >= 1) throw std::invalid_argument("TaskConfig: w_ema must be in (0,1)");
    if (max_iterations < 1) throw std::invalid_argument("TaskConfig: max_iterations must be >= 1");
    if (ddim_steps < 1) throw std::invalid_argument("TaskConfig: ddim_steps must be >= 1");
    if (ramp_fraction <= 0 || ramp_fraction > 1)
      throw std::invalid_argument("TaskConfig: ramp_fraction must be in (0,1]");
  }
};

/// Labeled and unlabeled samples sharing one class vocabulary.
template <typename T>
class DatasetSplit {
 public:
  DatasetSplit() = default;
  DatasetSplit(std::vector<std::pair<Volume<T>, LabelMap>> labeled, std::vector<Volume<T>> unlabeled,
               std::vector<int> labeled_domains = {}, std::vector<int> unlabeled_domains = {})
      : labeled_(std::move(labeled)),
        unlabeled_(std::move(unlabeled)),
        labeled_domains_(std::move(labeled_domains)),
        unlabeled_domains_(std::move(unlabeled_domains)) {
    if (labeled_.empty()) throw std::invalid_argument("DatasetSplit: need at least one labeled sample");
    const int k = labeled_.front().second.num_classes();
    for (const auto& [v, y] : labeled_) {
      if (y.num_classes() != k)
        throw std::invalid_argument("DatasetSplit: samples disagree on num_classes");
      if (v.shape() != y.shape())
        throw std::invalid_argument("DatasetSplit: volume/label shape mismatch");
    }
    if (!labeled_domains_.empty() && labeled_domains_.size() != labeled_.size())
      throw std::invalid_argument("DatasetSplit: labeled domain tag count mismatch");
    if (!unlabeled_domains_.empty() && unlabeled_domains_.size() != unlabeled_.size())
      throw std::invalid_argument("DatasetSplit: unlabeled domain tag count mismatch");
  }

  const std::vector<std::pair<Volume<T>, LabelMap>>& labeled() const { return labeled_; }
  const std::vector<Volume<T>>& unlabeled() const { return unlabeled_; }
  const std::vector<int>& labeled_domains() const { return labeled_domains_; }
  const std::vector<int>& unlabeled_domains() const { return unlabeled_domains_; }
  int num_classes() const { return labeled_.front().second.num_classes(); }

 private:
  std::vector<std::pair<Volume<T>, LabelMap>> labeled_;
  std::vector<Volume<T>> unlabeled_;
  std::vector<int> labeled_domains_;
  std::vector<int> unlabeled_domains_;
};

template <typename T>
OneHot<T> one_hot_encode(const LabelMap& label) {
  const Shape3 s = label.shape();
  Grid4<T> out(label.num_classes(), s.d, s.h, s.w);
  const auto& src = label.grid().array();
  const Index vox = s.count();
  for (Index i = 0; i < vox; ++i) {
    const std::int32_t k = src[i];
    out.array()[k * vox + i] = T(1);
  }
  return OneHot<T>(std::move(out));
}

/// Per-voxel index of the maximal channel; ties broken by lowest class index.
template <typename T>
LabelMap argmax_decode(const ProbMap<T>& p) {
  const Shape4 s = p.grid().shape();
  Grid3<std::int32_t> out(s.d, s.h, s.w);
  const Index vox = s.voxels();
  const auto& v = p.grid().array();
  for (Index i = 0; i < vox; ++i) {
    Index best = 0;
    T best_val = v[i];
    for (Index c = 1; c < s.c; ++c) {
      const T val = v[c * vox + i];
      if (val > best_val) {
        best_val = val;
        best = c;
      }
    }
    out.array()[i] = static_cast<std::int32_t>(best);
  }
  return LabelMap(std::move(out), static_cast<int>(s.c));
}

/// Argmax over the raw channel grid (no ProbMap validation); same tie rule.
template <typename T>
LabelMap argmax_decode(const Grid4<T>& g) {
  return argmax_decode(ProbMap<T>(g, ProbKind::logits));
}

template <typename T>
Grid4<T> softmax_channels(const Grid4<T>& logits) {
  const Index vox = logits.voxels();
  const Index k = logits.c();
  Grid4<T> out(logits.shape(), logits.array());
  auto& v = out.array();
  for (Index i = 0; i < vox; ++i) {
    T mx = v[i];
    for (Index c = 1; c < k; ++c) mx = std::max(mx, v[c * vox + i]);
    T sum = T(0);
    for (Index c = 0; c < k; ++c) {
      T& e = v[c * vox + i];
      e = std::exp(e - mx);
      sum += e;
    }
    for (Index c = 0; c < k; ++c) v[c * vox + i] /= sum;
  }
  return out;
}

}  // namespace ad
