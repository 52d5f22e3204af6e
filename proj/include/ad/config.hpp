#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ad/core.hpp"
#include "ad/data.hpp"
#include "ad/rs.hpp"

namespace ad::cli {

/// Everything a run needs, resolved from preset + file + overrides.
struct ResolvedConfig {
  TaskConfig task;
  data::PreprocessSpec preprocess;
  rs::RSConfig rs;
  data::SyntheticSpec synth;
  std::string preset = "desk";
  std::string manifest;       // train input
  std::string eval_manifest;  // eval input
  std::string checkpoint;     // eval input
  double eval_overlap = 0.5;
};

namespace detail {

inline Shape3 parse_patch(const std::string& s) {
  Shape3 p;
  char sep1 = 0, sep2 = 0;
  std::istringstream ss(s);
  ss >> p.d >> sep1 >> p.h >> sep2 >> p.w;
  if (!ss || (sep1 != 'x' && sep1 != 'X') || (sep2 != 'x' && sep2 != 'X'))
    throw std::invalid_argument("config: patch_size must look like DxHxW, got " + s);
  return p;
}

inline bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw std::invalid_argument("config: expected a boolean, got " + v);
}

}  // namespace detail

/// Per-dataset hyper-parameter presets. The four named datasets carry the
/// published table values; `desk` is the CPU-scale smoke configuration.
inline ResolvedConfig preset_config(const std::string& name) {
  ResolvedConfig c;
  c.preset = name;
  auto& t = c.task;
  t.n_aug = 3;
  t.tau = 50;
  t.alpha_diff = 0.2;
  t.mu_unsup = 10.0;
  t.w_ema = 0.99;
  t.t_diffusion = 1000;
  t.max_iterations = 30000;
  t.ddim_steps = 10;
  if (name == "laseg") {
    t.task = Task::SSL;
    t.patch_size = {112, 112, 80};
    t.base_lr = 1e-2;
    t.batch_size = 4;
    t.feature_size = 32;
    t.num_classes = 2;
    c.preprocess.normalize = data::Normalize::zero_mean_unit_var;
  } else if (name == "synapse") {
    t.task = Task::IBSSL;
    t.patch_size = {64, 128, 128};
    t.base_lr = 3e-2;
    t.batch_size = 4;
    t.feature_size = 32;
    t.num_classes = 14;
    c.preprocess.normalize = data::Normalize::unit_range;
  } else if (name == "mmwhs") {
    t.task = Task::UDA;
    t.patch_size = {128, 128, 128};
    t.base_lr = 5e-3;
    t.batch_size = 2;
    t.feature_size = 32;
    t.num_classes = 5;
    c.preprocess.clip_upper_pct = 2.0;
    c.preprocess.normalize = data::Normalize::unit_range;
  } else if (name == "mnms") {
    t.task = Task::SemiDG;
    t.patch_size = {32, 128, 128};
    t.base_lr = 1e-2;
    t.batch_size = 4;
    t.feature_size = 32;
    t.num_classes = 4;
    c.preprocess.clip_upper_pct = 0.5;
    c.preprocess.clip_lower_pct = 0.5;
    c.preprocess.normalize = data::Normalize::unit_range;
  } else if (name == "desk") {
    t.task = Task::SSL;
    t.patch_size = {16, 16, 16};
    t.base_lr = 0.1;
    t.batch_size = 2;
    t.feature_size = 8;
    t.num_classes = 3;
    t.t_diffusion = 100;
    t.max_iterations = 200;
    t.ddim_steps = 4;
    c.preprocess.normalize = data::Normalize::none;
    c.synth.num_domains = 1;
    c.synth.volumes_per_domain = 4;
    c.synth.labeled_fraction = 0.5;
    c.synth.grid_size = 16;
  } else {
    throw std::invalid_argument("config: unknown preset '" + name + "'");
  }
  c.synth.num_classes = t.num_classes;
  return c;
}

inline void apply_key(ResolvedConfig& c, const std::string& key, const std::string& value) {
  auto& t = c.task;
  if (key == "preset") {
    const std::uint64_t seed = t.seed;
    c = preset_config(value);
    c.task.seed = seed;
  } else if (key == "task") t.task = task_from_string(value);
  else if (key == "patch_size") t.patch_size = detail::parse_patch(value);
  else if (key == "base_lr") t.base_lr = std::stod(value);
  else if (key == "batch_size") t.batch_size = std::stoi(value);
  else if (key == "feature_size") t.feature_size = std::stoi(value);
  else if (key == "num_classes") {
    t.num_classes = std::stoi(value);
    c.synth.num_classes = t.num_classes;
  } else if (key == "t_diffusion") t.t_diffusion = std::stoi(value);
  else if (key == "n_aug") t.n_aug = std::stoi(value);
  else if (key == "tau") t.tau = std::stoi(value);
  else if (key == "alpha_diff") t.alpha_diff = std::stod(value);
  else if (key == "mu_unsup") t.mu_unsup = std::stod(value);
  else if (key == "w_ema") t.w_ema = std::stod(value);
  else if (key == "max_iterations") t.max_iterations = std::stoi(value);
  else if (key == "seed") t.seed = std::stoull(value);
  else if (key == "ddim_steps") t.ddim_steps = std::stoi(value);
  else if (key == "ramp_fraction") t.ramp_fraction = std::stod(value);
  else if (key == "validate_every") t.validate_every = std::stoi(value);
  else if (key == "clip_upper_pct") c.preprocess.clip_upper_pct = std::stod(value);
  else if (key == "clip_lower_pct") c.preprocess.clip_lower_pct = std::stod(value);
  else if (key == "normalize") c.preprocess.normalize = data::normalize_from_string(value);
  else if (key == "crop_to_foreground") c.preprocess.crop_to_foreground = detail::parse_bool(value);
  else if (key == "gumbel_temperature") c.rs.gumbel_temperature = std::stod(value);
  else if (key == "blur_sigma") c.rs.blur_sigma = std::stod(value);
  else if (key == "blur_radius") c.rs.blur_kernel_radius = std::stoi(value);
  else if (key == "num_domains") c.synth.num_domains = std::stoi(value);
  else if (key == "volumes_per_domain") c.synth.volumes_per_domain = std::stoi(value);
  else if (key == "labeled_fraction") c.synth.labeled_fraction = std::stod(value);
  else if (key == "labeled_domains") c.synth.labeled_domains = std::stoi(value);
  else if (key == "grid_size") c.synth.grid_size = std::stoll(value);
  else if (key == "class_frequency_skew") c.synth.class_frequency_skew = std::stod(value);
  else if (key == "manifest") c.manifest = value;
  else if (key == "eval_manifest") c.eval_manifest = value;
  else if (key == "checkpoint") c.checkpoint = value;
  else if (key == "eval_overlap") c.eval_overlap = std::stod(value);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

/// Parse a flat key-value config file, then apply `key=value` overrides in
/// order. A `preset` key resets everything it covers, so it normally comes
/// first; unknown keys are rejected.
inline ResolvedConfig parse_config(const std::filesystem::path& path,
                                   const std::vector<std::string>& overrides = {}) {
  ResolvedConfig c = preset_config("desk");
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path.string());
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      while (!line.empty() && (line.back() == ' ' || line.back() == '\t' || line.back() == '\r'))
        line.pop_back();
      std::size_t start = line.find_first_not_of(" \t");
      if (start == std::string::npos) continue;
      const auto eq = line.find('=', start);
      if (eq == std::string::npos)
        throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                    " is not key=value");
      const std::string key = line.substr(start, eq - start);
      const std::string value = line.substr(eq + 1);
      apply_key(c, key, value);
    }
  }
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: override '" + kv + "' is not key=value");
    apply_key(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  c.task.validate();
  c.preprocess.validate();
  c.rs.validate();
  return c;
}

/// All effective values, sorted by key, for the config.resolved audit file.
inline std::string resolved_text(const ResolvedConfig& c) {
  std::map<std::string, std::string> kv;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  kv["preset"] = c.preset;
  kv["task"] = to_string(c.task.task);
  kv["patch_size"] = std::to_string(c.task.patch_size.d) + "x" +
                     std::to_string(c.task.patch_size.h) + "x" +
                     std::to_string(c.task.patch_size.w);
  kv["base_lr"] = num(c.task.base_lr);
  kv["batch_size"] = std::to_string(c.task.batch_size);
  kv["feature_size"] = std::to_string(c.task.feature_size);
  kv["num_classes"] = std::to_string(c.task.num_classes);
  kv["t_diffusion"] = std::to_string(c.task.t_diffusion);
  kv["n_aug"] = std::to_string(c.task.n_aug);
  kv["tau"] = std::to_string(c.task.tau);
  kv["alpha_diff"] = num(c.task.alpha_diff);
  kv["mu_unsup"] = num(c.task.mu_unsup);
  kv["w_ema"] = num(c.task.w_ema);
  kv["max_iterations"] = std::to_string(c.task.max_iterations);
  kv["seed"] = std::to_string(c.task.seed);
  kv["ddim_steps"] = std::to_string(c.task.ddim_steps);
  kv["ramp_fraction"] = num(c.task.ramp_fraction);
  kv["validate_every"] = std::to_string(c.task.validate_every);
  kv["clip_upper_pct"] = num(c.preprocess.clip_upper_pct);
  kv["clip_lower_pct"] = num(c.preprocess.clip_lower_pct);
  kv["normalize"] = data::to_string(c.preprocess.normalize);
  kv["crop_to_foreground"] = c.preprocess.crop_to_foreground ? "1" : "0";
  kv["gumbel_temperature"] = num(c.rs.gumbel_temperature);
  kv["blur_sigma"] = num(c.rs.blur_sigma);
  kv["blur_radius"] = std::to_string(c.rs.blur_kernel_radius);
  kv["num_domains"] = std::to_string(c.synth.num_domains);
  kv["volumes_per_domain"] = std::to_string(c.synth.volumes_per_domain);
  kv["labeled_fraction"] = num(c.synth.labeled_fraction);
  kv["labeled_domains"] = std::to_string(c.synth.labeled_domains);
  kv["grid_size"] = std::to_string(c.synth.grid_size);
  kv["class_frequency_skew"] = num(c.synth.class_frequency_skew);
  kv["manifest"] = c.manifest;
  kv["eval_manifest"] = c.eval_manifest;
  kv["checkpoint"] = c.checkpoint;
  kv["eval_overlap"] = num(c.eval_overlap);
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

}  // namespace ad::cli
