#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ad/config.hpp"
#include "ad/eval.hpp"
#include "ad/trainer.hpp"

namespace ad::cli {

namespace detail {

inline void write_resolved(const ResolvedConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream os(out_dir / "config.resolved");
  os << resolved_text(cfg);
}

}  // namespace detail

/// Generate a synthetic dataset and write raw grids plus train/eval
/// manifests under <out>/data.
inline int run_synth(ResolvedConfig cfg, const std::filesystem::path& out_dir) {
  detail::write_resolved(cfg, out_dir);
  cfg.synth.seed = cfg.task.seed;
  const auto ds = data::make_synthetic_with_truth<float>(cfg.synth);
  const auto manifest = data::save_dataset(out_dir / "data", ds);
  std::printf("synth: %zu labeled + %zu unlabeled volumes -> %s\n", ds.split.labeled().size(),
              ds.split.unlabeled().size(), manifest.string().c_str());
  return 0;
}

/// Train on the manifest named by the config; writes logs and checkpoints.
inline int run_train(const ResolvedConfig& cfg, const std::filesystem::path& out_dir,
                     const train::TrainOptions& opts = {}) {
  detail::write_resolved(cfg, out_dir);
  if (cfg.manifest.empty()) throw std::invalid_argument("train: config needs manifest=<path>");
  const auto split = data::load_split<float>(cfg.manifest);
  auto state = train::make_train_state<float>(cfg.task, cfg.rs);
  const auto result = train::fit(state, split, out_dir, opts);
  std::printf("train: %lld iterations, best labeled Dice %.4f -> %s\n",
              static_cast<long long>(cfg.task.max_iterations), result.best_score,
              (out_dir / "checkpoint_best.bin").string().c_str());
  return 0;
}

/// Sliding-window inference over an eval manifest; writes metrics.csv with
/// per-volume rows, per-class Dice columns and a trailing mean row.
inline int run_eval(const ResolvedConfig& cfg, const std::filesystem::path& out_dir) {
  detail::write_resolved(cfg, out_dir);
  if (cfg.checkpoint.empty()) throw std::invalid_argument("eval: config needs checkpoint=<path>");
  if (cfg.eval_manifest.empty())
    throw std::invalid_argument("eval: config needs eval_manifest=<path>");
  const auto model = net::load_checkpoint<float>(cfg.checkpoint);
  const auto split = data::load_split<float>(cfg.eval_manifest);
  if (split.labeled().empty())
    throw std::invalid_argument("eval: manifest has no labeled volumes to score");

  const int k = model.cfg.num_classes;
  std::ofstream csv(out_dir / "metrics.csv");
  csv << "volume,avg_dice,avg_jaccard,avg_asd,avg_hd95";
  for (int c = 1; c < k; ++c) csv << ",dice_" << c;
  csv << '\n';

  auto fmt = [](double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return std::string(buf);
  };

  std::vector<double> sum(4 + static_cast<std::size_t>(k) - 1, 0.0);
  std::size_t n = 0;
  double mean_dice_acc = 0;
  for (std::size_t i = 0; i < split.labeled().size(); ++i) {
    const auto& [v, y] = split.labeled()[i];
    const auto probs = eval::sliding_window_infer(model, v, cfg.task.patch_size, cfg.eval_overlap);
    const auto pred = argmax_decode(probs);
    const auto report = eval::evaluate(pred, y, v.spacing());
    csv << "volume_" << i << ',' << fmt(report.mean_dice()) << ',' << fmt(report.mean_jaccard())
        << ',' << fmt(report.mean_asd()) << ',' << fmt(report.mean_hd95());
    sum[0] += report.mean_dice();
    sum[1] += report.mean_jaccard();
    sum[2] += report.mean_asd();
    sum[3] += report.mean_hd95();
    for (int c = 1; c < k; ++c) {
      const double d = report.per_class[static_cast<std::size_t>(c - 1)].dice;
      csv << ',' << fmt(d);
      sum[3 + static_cast<std::size_t>(c)] += d;
    }
    csv << '\n';
    mean_dice_acc += report.mean_dice();
    ++n;
  }
  csv << "mean";
  for (std::size_t j = 0; j < sum.size(); ++j) csv << ',' << fmt(sum[j] / static_cast<double>(n));
  csv << '\n';
  std::printf("eval: %zu volumes, mean foreground Dice %.4f -> %s\n", n,
              mean_dice_acc / static_cast<double>(n), (out_dir / "metrics.csv").string().c_str());
  return 0;
}

struct RunConfig {
  std::string command;  // synth | train | eval
  std::string config_path;
  std::string output_dir = ".";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::vector<std::string> overrides;
};

inline int run(const RunConfig& rc) {
  std::vector<std::string> overrides = rc.overrides;
  if (rc.seed_set) overrides.push_back("seed=" + std::to_string(rc.seed));
  const auto cfg = parse_config(rc.config_path, overrides);
  const std::filesystem::path out_dir = rc.output_dir;
  if (rc.command == "synth") return run_synth(cfg, out_dir);
  if (rc.command == "train") return run_train(cfg, out_dir);
  if (rc.command == "eval") return run_eval(cfg, out_dir);
  throw std::invalid_argument("unknown command: " + rc.command);
}

}  // namespace ad::cli
