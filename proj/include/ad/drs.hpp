#pragma once

#include <cmath>
#include <deque>
#include <stdexcept>
#include <vector>

#include "ad/tensor.hpp"

namespace ad::drs {

/// Tracks the per-class Dice of the denoising decoder over a sliding window
/// and turns learning speed plus reversed Dice into per-class loss weights.
///
/// For each class k, with lambda the windowed Dice history and
/// delta_e = lambda_e - lambda_{e-1}:
///   du = sum min(delta, 0) * ln(lambda_e / lambda_{e-1})   ("not learned")
///   dl = sum max(delta, 0) * ln(lambda_e / lambda_{e-1})   ("learned")
///   d  = (du + eps) / (dl + eps)
///   w_lambda = mean of (1 - lambda) over the window
///   w  = w_lambda * d^alpha, normalized to mean 1 across classes.
/// Both products are nonnegative: a Dice drop has delta < 0 and log-ratio
/// < 0. Stagnant histories give du = dl = 0, hence a neutral d = 1.
class DifficultyState {
 public:
  DifficultyState(int num_classes, int tau, double alpha, double eps = 1e-8)
      : num_classes_(num_classes), tau_(tau), alpha_(alpha), eps_(eps) {
    if (num_classes < 1) throw std::invalid_argument("DifficultyState: num_classes must be >= 1");
    if (tau < 1) throw std::invalid_argument("DifficultyState: tau must be >= 1");
    if (alpha <= 0) throw std::invalid_argument("DifficultyState: alpha must be > 0");
    if (eps <= 0) throw std::invalid_argument("DifficultyState: eps must be > 0");
  }

  int num_classes() const { return num_classes_; }
  int tau() const { return tau_; }
  std::size_t observations() const { return history_.size(); }

  /// Append one per-class Dice vector; entries beyond the last tau+1 expire.
  void observe(const ArrayX<double>& dice) {
    if (dice.size() != num_classes_)
      throw std::invalid_argument("DifficultyState::observe: wrong class count");
    if ((dice < 0.0).any() || (dice > 1.0).any())
      throw std::invalid_argument("DifficultyState::observe: Dice values must be in [0,1]");
    history_.push_back(dice);
    while (history_.size() > static_cast<std::size_t>(tau_) + 1) history_.pop_front();
  }

  /// Per-class weights, mean 1. Uniform until two observations exist.
  ArrayX<double> weights() const {
    ArrayX<double> w = ArrayX<double>::Ones(num_classes_);
    if (history_.size() < 2) return w;

    for (int k = 0; k < num_classes_; ++k) {
      double du = 0, dl = 0, rev = 0;
      for (std::size_t e = 0; e < history_.size(); ++e) {
        const double lam = history_[e][k];
        rev += 1.0 - lam;
        if (e == 0) continue;
        const double prev = history_[e - 1][k];
        const double delta = lam - prev;
        const double log_ratio = std::log(std::max(lam, eps_) / std::max(prev, eps_));
        du += std::min(delta, 0.0) * log_ratio;
        dl += std::max(delta, 0.0) * log_ratio;
      }
      const double d = (du + eps_) / (dl + eps_);
      const double w_lambda = rev / static_cast<double>(history_.size());
      w[k] = w_lambda * std::pow(d, alpha_);
    }
    const double mean = w.mean();
    if (mean > 0) w /= mean;
    else w.setOnes();
    return w;
  }

 private:
  int num_classes_;
  int tau_;
  double alpha_;
  double eps_;
  std::deque<ArrayX<double>> history_;
};

}  // namespace ad::drs
