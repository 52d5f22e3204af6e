#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ad/core.hpp"

namespace ad::obj {

/// Per-iteration loss summary; total = l_deno + l_diff + ramp_weight * l_u.
struct LossReport {
  double l_deno = 0;
  double l_diff = 0;
  double l_u = 0;
  double ramp_weight = 0;
  double total = 0;
};

constexpr double kDiceSmooth = 1e-5;

template <typename T>
struct DiceCeParts {
  T ce = 0;
  T dice = 0;
  T value() const { return (ce + dice) / T(2); }
};

namespace detail {

template <typename T>
void check_shapes(const Grid4<T>& logits, const Grid4<T>& target, const ArrayX<T>* weights) {
  if (!(logits.shape() == target.shape()))
    throw std::invalid_argument("dice_ce: logits/target shape mismatch");
  if (weights && weights->size() != logits.c())
    throw std::invalid_argument("dice_ce: weight vector length must equal K");
  if (weights && (*weights < T(0)).any())
    throw std::invalid_argument("dice_ce: class weights must be nonnegative");
}

}  // namespace detail

/// Combined loss: (weighted voxel-mean cross-entropy + weighted soft Dice
/// loss) / 2. The Dice term smooths numerator and denominator with 1e-5 and
/// averages 1 - dice_k over classes; weights, when given, scale both terms
/// per class. Optionally emits d(loss)/d(logits).
template <typename T>
DiceCeParts<T> dice_ce_parts(const Grid4<T>& logits, const Grid4<T>& target,
                             const ArrayX<T>* weights = nullptr, Grid4<T>* dlogits = nullptr) {
  detail::check_shapes(logits, target, weights);
  const Index k = logits.c();
  const Index vox = logits.voxels();
  const T n = static_cast<T>(vox);
  const Grid4<T> probs = softmax_channels(logits);
  const T smooth = static_cast<T>(kDiceSmooth);

  // Cross entropy: -(1/V) sum_v w_{y(v)} ln p_{y(v)}, targets one-hot-like.
  T ce = T(0);
  for (Index c = 0; c < k; ++c) {
    const T w = weights ? (*weights)[c] : T(1);
    const auto t_plane = target.channel(c);
    const auto p_plane = probs.channel(c);
    ce -= w * (t_plane * p_plane.max(T(1e-30)).log()).sum();
  }
  ce /= n;

  // Soft Dice per class.
  ArrayX<T> num(k), den(k), dice_k(k);
  for (Index c = 0; c < k; ++c) {
    const auto t_plane = target.channel(c);
    const auto p_plane = probs.channel(c);
    num[c] = T(2) * (p_plane * t_plane).sum() + smooth;
    den[c] = p_plane.sum() + t_plane.sum() + smooth;
    dice_k[c] = num[c] / den[c];
  }
  T dice_loss = T(0);
  for (Index c = 0; c < k; ++c) {
    const T w = weights ? (*weights)[c] : T(1);
    dice_loss += w * (T(1) - dice_k[c]);
  }
  dice_loss /= static_cast<T>(k);

  if (dlogits) {
    // dL/dp, then chain through the softmax per voxel.
    Grid4<T> dprobs(logits.shape().c, logits.d(), logits.h(), logits.w());
    for (Index c = 0; c < k; ++c) {
      const T w = weights ? (*weights)[c] : T(1);
      const auto t_plane = target.channel(c);
      const auto p_plane = probs.channel(c);
      // CE term: -(w/V) t / p.
      dprobs.channel(c) = -(w / n) * t_plane / p_plane.max(T(1e-30));
      // Dice term: -(w/K) * (2 t den - num) / den^2.
      dprobs.channel(c) += -(w / static_cast<T>(k)) *
                           (T(2) * t_plane * den[c] - num[c]) / (den[c] * den[c]);
    }
    *dlogits = Grid4<T>(logits.shape().c, logits.d(), logits.h(), logits.w());
    for (Index v = 0; v < vox; ++v) {
      T dot = T(0);
      for (Index c = 0; c < k; ++c) dot += dprobs.array()[c * vox + v] * probs.array()[c * vox + v];
      for (Index c = 0; c < k; ++c)
        dlogits->array()[c * vox + v] =
            probs.array()[c * vox + v] * (dprobs.array()[c * vox + v] - dot) / T(2);
    }
  }

  return {ce, dice_loss};
}

template <typename T>
T dice_ce(const ProbMap<T>& logits, const OneHot<T>& target,
          const std::optional<ArrayX<T>>& class_weights = std::nullopt) {
  const ArrayX<T>* w = class_weights ? &*class_weights : nullptr;
  return dice_ce_parts(logits.grid(), target.grid(), w).value();
}

/// Eq.-style supervised denoising loss: mean DiceCE over the labeled batch.
template <typename T>
T l_deno(const std::vector<ProbMap<T>>& preds, const std::vector<OneHot<T>>& targets) {
  if (preds.empty() || preds.size() != targets.size())
    throw std::invalid_argument("l_deno: empty or mismatched batch");
  T acc = T(0);
  for (std::size_t i = 0; i < preds.size(); ++i) acc += dice_ce(preds[i], targets[i]);
  return acc / static_cast<T>(preds.size());
}

/// Difficulty-aware supervised loss: class-weighted DiceCE, batch mean.
template <typename T>
T l_diff(const std::vector<ProbMap<T>>& preds, const std::vector<OneHot<T>>& targets,
         const ArrayX<T>& w_diff) {
  if (preds.empty() || preds.size() != targets.size())
    throw std::invalid_argument("l_diff: empty or mismatched batch");
  T acc = T(0);
  for (std::size_t i = 0; i < preds.size(); ++i)
    acc += dice_ce(preds[i], targets[i], std::optional<ArrayX<T>>(w_diff));
  return acc / static_cast<T>(preds.size());
}

/// Unsupervised loss against hard pseudo labels (gradient-detached targets).
template <typename T>
T l_u(const std::vector<ProbMap<T>>& preds, const std::vector<LabelMap>& pseudo) {
  if (preds.empty() || preds.size() != pseudo.size())
    throw std::invalid_argument("l_u: empty or mismatched batch");
  T acc = T(0);
  for (std::size_t i = 0; i < preds.size(); ++i)
    acc += dice_ce(preds[i], one_hot_encode<T>(pseudo[i]));
  return acc / static_cast<T>(preds.size());
}

/// Gaussian ramp-up over the first ramp_fraction of training:
/// mu * exp(-5 (1 - min(iter/ramp_len, 1))^2), flat at mu afterwards.
inline double ramp_weight(Index iteration, Index max_iterations, double mu,
                          double ramp_fraction = 0.4) {
  if (iteration < 0 || iteration > max_iterations)
    throw std::invalid_argument("ramp_weight: iteration out of range");
  const double ramp_len = ramp_fraction * static_cast<double>(max_iterations);
  const double r =
      ramp_len > 0 ? std::min(static_cast<double>(iteration) / ramp_len, 1.0) : 1.0;
  return mu * std::exp(-5.0 * (1.0 - r) * (1.0 - r));
}

}  // namespace ad::obj
