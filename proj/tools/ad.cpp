// Command-line front end: synthetic data generation, training and
// evaluation, all driven by flat key=value configs with presets.
#include <CLI11.hpp>

#include <cstdio>
#include <exception>

#include "ad/run.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Aggregating & decoupling semi-supervised volumetric segmentation"};
  app.require_subcommand(1);

  ad::cli::RunConfig rc;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", rc.config_path, "key=value config file (preset=... first)");
    cmd->add_option("--out", rc.output_dir, "output directory")->required();
    cmd->add_option("--seed", rc.seed, "override the run seed")->each([&](const std::string&) {
      rc.seed_set = true;
    });
    cmd->add_option("--set", rc.overrides, "extra key=value overrides")->take_all();
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-domain dataset");
  auto* train = app.add_subcommand("train", "run the training pipeline");
  auto* eval = app.add_subcommand("eval", "score a checkpoint over an eval manifest");
  add_common(synth);
  add_common(train);
  add_common(eval);

  CLI11_PARSE(app, argc, argv);

  rc.command = app.get_subcommands().front()->get_name();
  try {
    return ad::cli::run(rc);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s: %s\n", rc.command.c_str(), e.what());
    return 1;
  }
}
