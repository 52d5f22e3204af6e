#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ad/core.hpp"
#include "ad/data.hpp"
#include "ad/diffusion.hpp"
#include "ad/drs.hpp"
#include "ad/eval.hpp"
#include "ad/network.hpp"
#include "ad/objectives.hpp"
#include "ad/rs.hpp"
#include "ad/svda.hpp"

namespace ad::train {

using net::DecoderId;
using obj::LossReport;

struct TrainOptions {
  bool apply_ema = true;
  // Ablation switch: additionally trains dec_theta on the labeled batch,
  // breaking the decoupling contract on purpose.
  bool couple_supervised_theta = false;
  bool with_deno = true;
  bool with_diff = true;
  bool with_unsup = true;
};

/// poly decay: base_lr * (1 - iter/max_iter)^0.9.
inline double poly_lr(Index iteration, Index max_iterations, double base_lr) {
  if (iteration > max_iterations) throw std::invalid_argument("poly_lr: iteration out of range");
  return base_lr *
         std::pow(1.0 - static_cast<double>(iteration) / static_cast<double>(max_iterations), 0.9);
}

template <typename T>
struct TrainState {
  TaskConfig cfg;
  rs::RSConfig rs_cfg;
  net::VNet<T> model;
  diff::NoiseSchedule sched;
  drs::DifficultyState difficulty;
  Index iteration = 0;
  Rng data_rng;
  Rng noise_rng;
  Rng gumbel_rng;
  std::vector<ArrayX<T>> momentum;  // one buffer per parameter pack
  double best_score = -1.0;

  TrainState(const TaskConfig& config, const rs::RSConfig& rs_config, Rng init_rng)
      : cfg(config),
        rs_cfg(rs_config),
        model(net::make_vnet<T>(
            net::VNetConfig{config.num_classes, config.feature_size, 4, 64}, init_rng)),
        sched(diff::make_schedule(config.t_diffusion)),
        difficulty(config.num_classes, config.tau, config.alpha_diff),
        data_rng(0),
        noise_rng(0),
        gumbel_rng(0) {
    data_rng = init_rng.fork(1);
    noise_rng = init_rng.fork(2);
    gumbel_rng = init_rng.fork(3);
    for (auto* pack : model.packs()) momentum.push_back(ArrayX<T>::Zero(pack->w.size()));
  }
};

template <typename T>
TrainState<T> make_train_state(const TaskConfig& cfg, const rs::RSConfig& rs_cfg) {
  cfg.validate();
  rs_cfg.validate();
  return TrainState<T>(cfg, rs_cfg, Rng(cfg.seed));
}

namespace detail {

/// SVDA followed by the mandatory crop/pad to the configured patch size (the
/// sampled set may or may not contain random_crop).
template <typename T>
std::pair<Volume<T>, std::optional<LabelMap>> augment_item(const Volume<T>& v,
                                                           const std::optional<LabelMap>& y,
                                                           const TaskConfig& cfg, Rng& rng) {
  svda::SvdaConfig aug_cfg;
  aug_cfg.patch = cfg.patch_size;
  const auto ops = svda::sample_ops(cfg.n_aug, rng);
  auto pair = svda::apply(v, y, ops, aug_cfg, rng);
  if (pair.volume.shape() != cfg.patch_size) {
    auto forced = svda::apply(pair.volume, pair.label,
                              {{svda::OpName::random_crop, svda::OpKind::spatial}}, aug_cfg, rng);
    pair.volume = std::move(forced.volume);
    pair.label = std::move(forced.label);
  }
  return {std::move(pair.volume), std::move(pair.label)};
}

template <typename T>
ArrayX<double> batch_class_dice(const std::vector<Grid4<T>>& logits,
                                const std::vector<OneHot<T>>& targets, int k) {
  ArrayX<double> inter = ArrayX<double>::Zero(k);
  ArrayX<double> total = ArrayX<double>::Zero(k);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto pred = argmax_decode(logits[i]);
    const Index vox = pred.grid().size();
    for (Index v = 0; v < vox; ++v) {
      const Index p = pred.grid().array()[v];
      Index g = 0;
      for (Index c = 0; c < k; ++c)
        if (targets[i].grid().array()[c * vox + v] > T(0.5)) g = c;
      total[p] += 1;
      total[g] += 1;
      if (p == g) inter[p] += 1;
    }
  }
  ArrayX<double> dice(k);
  for (int c = 0; c < k; ++c) dice[c] = total[c] > 0 ? 2.0 * inter[c] / total[c] : 1.0;
  return dice;
}

}  // namespace detail

/// One supervised-or-unsupervised gradient accumulation pass following the
/// paper pipeline order. Gradients land in the packs each flow touches; the
/// pseudo-label construction never contributes gradients.
template <typename T>
LossReport compute_gradients(TrainState<T>& state,
                             const std::vector<std::pair<Volume<T>, LabelMap>>& labeled_batch,
                             const std::vector<Volume<T>>& unlabeled_batch,
                             const TrainOptions& opts = {}) {
  const TaskConfig& cfg = state.cfg;
  auto& model = state.model;
  const int k = cfg.num_classes;
  if (labeled_batch.empty()) throw std::invalid_argument("train: labeled batch is empty");

  // SVDA on both batches.
  std::vector<Grid4<T>> x_l;
  std::vector<OneHot<T>> y_l;
  for (const auto& [v, y] : labeled_batch) {
    auto [av, ay] = detail::augment_item<T>(v, y, cfg, state.data_rng);
    x_l.push_back(net::volume_to_grid(av));
    y_l.push_back(one_hot_encode<T>(*ay));
  }
  std::vector<Grid4<T>> x_u;
  for (const auto& v : unlabeled_batch) {
    auto [av, ay] = detail::augment_item<T>(v, std::nullopt, cfg, state.data_rng);
    x_u.push_back(net::volume_to_grid(av));
  }

  const double n_l = static_cast<double>(x_l.size());
  LossReport report;
  report.ramp_weight =
      obj::ramp_weight(state.iteration, cfg.max_iterations, cfg.mu_unsup, cfg.ramp_fraction);

  // Denoising flow: noisy one-hot labels through stem_denoise -> trunk -> xi.
  const int t = 1 + static_cast<int>(state.noise_rng.uniform_index(cfg.t_diffusion));
  std::vector<Grid4<T>> deno_logits;
  for (std::size_t i = 0; i < x_l.size(); ++i) {
    Grid4<T> eps(k, x_l[i].d(), x_l[i].h(), x_l[i].w());
    state.noise_rng.fill_normal(eps.array());
    const auto y_t = diff::forward_diffuse(y_l[i], t, eps, state.sched);
    if (opts.with_deno) {
      net::EncodeTrace<T> et;
      net::DecodeTrace<T> dt;
      const auto pyr = net::encode_denoising(model, x_l[i], y_t, t, &et);
      auto logits = net::decode(model, DecoderId::xi, pyr, &dt);
      Grid4<T> dlogits;
      report.l_deno +=
          obj::dice_ce_parts<T>(logits, y_l[i].grid(), nullptr, &dlogits).value() / n_l;
      dlogits.array() *= static_cast<T>(1.0 / n_l);
      const auto dpyr = net::decode_backward(model, DecoderId::xi, dt, dlogits);
      net::encode_backward(model, et, dpyr);
      deno_logits.push_back(std::move(logits));
    } else {
      deno_logits.push_back(
          net::decode(model, DecoderId::xi, net::encode_denoising(model, x_l[i], y_t, t)));
    }
  }

  // Difficulty tracking feeds on the denoising decoder's predictions.
  state.difficulty.observe(detail::batch_class_dice(deno_logits, y_l, k));

  // Difficulty-aware flow: plain features through psi with DRS weights.
  if (opts.with_diff) {
    const ArrayX<double> w = state.difficulty.weights();
    const ArrayX<T> w_t = w.template cast<T>();
    for (std::size_t i = 0; i < x_l.size(); ++i) {
      net::EncodeTrace<T> et;
      net::DecodeTrace<T> dt;
      const auto pyr = net::encode_plain(model, x_l[i], &et);
      const auto logits = net::decode(model, DecoderId::psi, pyr, &dt);
      Grid4<T> dlogits;
      report.l_diff += obj::dice_ce_parts<T>(logits, y_l[i].grid(), &w_t, &dlogits).value() / n_l;
      dlogits.array() *= static_cast<T>(1.0 / n_l);
      const auto dpyr = net::decode_backward(model, DecoderId::psi, dt, dlogits);
      net::encode_backward(model, et, dpyr);
    }
  }

  // Ablation-only coupling: labeled supervision on theta.
  if (opts.couple_supervised_theta) {
    for (std::size_t i = 0; i < x_l.size(); ++i) {
      net::EncodeTrace<T> et;
      net::DecodeTrace<T> dt;
      const auto pyr = net::encode_plain(model, x_l[i], &et);
      const auto logits = net::decode(model, DecoderId::theta, pyr, &dt);
      Grid4<T> dlogits;
      obj::dice_ce_parts<T>(logits, y_l[i].grid(), nullptr, &dlogits);
      dlogits.array() *= static_cast<T>(1.0 / n_l);
      const auto dpyr = net::decode_backward(model, DecoderId::theta, dt, dlogits);
      net::encode_backward(model, et, dpyr);
    }
  }

  // Unsupervised flow: ensembled pseudo labels supervise theta.
  if (opts.with_unsup && !x_u.empty()) {
    const double n_u = static_cast<double>(x_u.size());
    for (const auto& xu : x_u) {
      // Domain-unbiased map via DDIM through the denoising path (stopped
      // gradients: plain forward passes only).
      diff::Denoiser<T> denoiser = [&](const Grid4<T>& y_t, int step_t) {
        return net::decode(model, DecoderId::xi, net::encode_denoising(model, xu, y_t, step_t));
      };
      const Shape4 shape{k, xu.d(), xu.h(), xu.w()};
      const auto p_xi_logits = diff::ddim_generate_logits<T>(
          denoiser, shape, cfg.ddim_steps, state.sched, state.noise_rng);
      // Class-unbiased map via psi, stopped-gradient forward pass.
      const auto p_psi_logits = net::decode(model, DecoderId::psi, net::encode_plain(model, xu));
      const LabelMap pseudo =
          rs::ensemble(ProbMap<T>(p_xi_logits, ProbKind::logits),
                       ProbMap<T>(p_psi_logits, ProbKind::logits), state.rs_cfg,
                       state.gumbel_rng);

      net::EncodeTrace<T> et;
      net::DecodeTrace<T> dt;
      const auto pyr = net::encode_plain(model, xu, &et);
      const auto logits = net::decode(model, DecoderId::theta, pyr, &dt);
      Grid4<T> dlogits;
      const auto target = one_hot_encode<T>(pseudo);
      report.l_u += obj::dice_ce_parts<T>(logits, target.grid(), nullptr, &dlogits).value() / n_u;
      dlogits.array() *= static_cast<T>(report.ramp_weight / n_u);
      const auto dpyr = net::decode_backward(model, DecoderId::theta, dt, dlogits);
      net::encode_backward(model, et, dpyr);
    }
  }

  report.total = report.l_deno + report.l_diff + report.ramp_weight * report.l_u;
  return report;
}

/// SGD with Nesterov momentum 0.9: v <- m v + g; p <- p - lr (g + m v).
template <typename T>
void optimizer_step(TrainState<T>& state, double lr) {
  constexpr T kMomentum = static_cast<T>(0.9);
  const auto packs = state.model.packs();
  for (std::size_t i = 0; i < packs.size(); ++i) {
    auto& v = state.momentum[i];
    v = kMomentum * v + packs[i]->g;
    packs[i]->w -= static_cast<T>(lr) * (packs[i]->g + kMomentum * v);
  }
}

/// One full training iteration: gradient accumulation over all flows, one
/// joint optimizer step, then EMA distillation into theta.
template <typename T>
LossReport train_step(TrainState<T>& state,
                      const std::vector<std::pair<Volume<T>, LabelMap>>& labeled_batch,
                      const std::vector<Volume<T>>& unlabeled_batch,
                      const TrainOptions& opts = {}) {
  state.model.zero_grad();
  const LossReport report = compute_gradients(state, labeled_batch, unlabeled_batch, opts);
  if (!std::isfinite(report.total))
    throw std::runtime_error("train_step: non-finite loss at iteration " +
                             std::to_string(state.iteration));
  optimizer_step(state, poly_lr(state.iteration, state.cfg.max_iterations, state.cfg.base_lr));
  if (opts.apply_ema) net::ema_distill(state.model, state.cfg.w_ema);
  state.iteration++;
  return report;
}

struct LogRow {
  Index iteration;
  LossReport report;
  double lr;
};

inline std::string format_log_row(const LogRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                static_cast<long long>(row.iteration), row.report.l_deno, row.report.l_diff,
                row.report.l_u, row.report.ramp_weight, row.report.total, row.lr);
  return buf;
}

template <typename T>
struct FitResult {
  net::VNet<T> best_model;
  net::VNet<T> final_model;
  std::vector<LogRow> log;
  double best_score = -1.0;
};

/// Mean foreground Dice of theta-path sliding-window predictions over the
/// labeled volumes (held-out model selection uses labeled data).
template <typename T>
double validate_labeled_dice(const net::VNet<T>& model, const DatasetSplit<T>& split,
                             Shape3 patch) {
  double acc = 0;
  for (const auto& [v, y] : split.labeled()) {
    const auto probs = eval::sliding_window_infer(model, v, patch, 0.5);
    const auto pred = argmax_decode(probs);
    double vol_acc = 0;
    for (int k = 1; k < y.num_classes(); ++k) vol_acc += eval::dice_score(pred, y, k);
    acc += vol_acc / static_cast<double>(y.num_classes() - 1);
  }
  return acc / static_cast<double>(split.labeled().size());
}

/// Algorithm-style training loop with periodic validation and best-model
/// tracking. When out_dir is set, writes train_log.csv, drs_weights.csv and
/// the best/final checkpoints.
template <typename T>
FitResult<T> fit(TrainState<T>& state, const DatasetSplit<T>& split,
                 const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                 const TrainOptions& opts = {}) {
  const TaskConfig& cfg = state.cfg;
  if (static_cast<int>(split.num_classes()) != cfg.num_classes)
    throw std::invalid_argument("fit: dataset/num_classes mismatch");

  std::ofstream log_file, drs_file;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    log_file.open(*out_dir / "train_log.csv");
    drs_file.open(*out_dir / "drs_weights.csv");
    log_file << "iteration,l_deno,l_diff,l_u,ramp,total,lr\n";
    drs_file << "class,iteration,weight\n";
  }

  FitResult<T> result;
  result.best_model = state.model;

  auto draw_batches = [&]() {
    std::vector<std::pair<Volume<T>, LabelMap>> labeled;
    std::vector<Volume<T>> unlabeled;
    for (int i = 0; i < cfg.batch_size; ++i)
      labeled.push_back(
          split.labeled()[static_cast<std::size_t>(state.data_rng.uniform_index(
              static_cast<Index>(split.labeled().size())))]);
    if (!split.unlabeled().empty())
      for (int i = 0; i < cfg.batch_size; ++i)
        unlabeled.push_back(
            split.unlabeled()[static_cast<std::size_t>(state.data_rng.uniform_index(
                static_cast<Index>(split.unlabeled().size())))]);
    return std::pair(std::move(labeled), std::move(unlabeled));
  };

  auto maybe_validate = [&]() {
    const double score = validate_labeled_dice(state.model, split, cfg.patch_size);
    if (score > state.best_score) {
      state.best_score = score;
      result.best_model = state.model;
    }
  };

  while (state.iteration < cfg.max_iterations) {
    const double lr = poly_lr(state.iteration, cfg.max_iterations, cfg.base_lr);
    const auto [labeled, unlabeled] = draw_batches();
    LossReport report;
    try {
      report = train_step(state, labeled, unlabeled, opts);
    } catch (const std::bad_alloc&) {
      throw std::runtime_error(
          "fit: out of memory; reduce patch_size, batch_size or feature_size");
    }
    const LogRow row{state.iteration - 1, report, lr};
    result.log.push_back(row);
    if (log_file.is_open()) log_file << format_log_row(row) << '\n';
    if (drs_file.is_open()) {
      const auto w = state.difficulty.weights();
      for (int c = 0; c < cfg.num_classes; ++c) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%d,%lld,%.9g", c,
                      static_cast<long long>(state.iteration - 1), w[c]);
        drs_file << buf << '\n';
      }
    }
    if (cfg.validate_every > 0 && state.iteration % cfg.validate_every == 0) maybe_validate();
  }
  maybe_validate();
  result.final_model = state.model;
  result.best_score = state.best_score;

  if (out_dir) {
    std::map<std::string, std::string> echo = {
        {"task", to_string(cfg.task)},
        {"num_classes", std::to_string(cfg.num_classes)},
        {"feature_size", std::to_string(cfg.feature_size)},
        {"seed", std::to_string(cfg.seed)}};
    net::save_checkpoint(*out_dir / "checkpoint_best.bin", result.best_model, echo);
    net::save_checkpoint(*out_dir / "checkpoint_final.bin", result.final_model, echo);
  }
  return result;
}

}  // namespace ad::train
