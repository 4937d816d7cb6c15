#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace emasam::cli;
  CLI::App app{"EMA prototype memory for streaming segmentation: data, training, evaluation"};
  app.require_subcommand(1);
  Overrides o;

  auto common = [&](CLI::App* s) {
    s->add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    s->add_option("--out", o.out, "output directory");
    s->add_option("--seed", o.seed, "run seed (overrides the config)");
    s->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
    s->add_flag("--force", o.force, "overwrite a non-empty output directory");
  };
  auto eval_flags = [&](CLI::App* s) {
    s->add_option("--mode", o.mode, "full|fixed_momentum|no_prototype");
    s->add_option("--segmenter", o.segmenter, "trained|analytic");
    s->add_option("--model", o.model, "model file");
  };

  auto* gen = app.add_subcommand("generate", "write the train and eval synthetic sequences");
  common(gen);
  auto* train = app.add_subcommand("train", "train the toy model");
  common(train);
  train->add_option("--epochs", o.epochs, "override train.epochs");
  train->add_option("--resume", o.resume, "directory of an interrupted training run");
  auto* run = app.add_subcommand("run", "stream sequences and write per-frame reports");
  common(run);
  eval_flags(run);
  run->add_option("--data", o.data, "directory of sequences (default <data root>/eval)");
  auto* abl = app.add_subcommand("ablate", "three-way mode ablation and gain sweep");
  common(abl);
  eval_flags(abl);
  auto* flops = app.add_subcommand("flops", "analytic FLOP overhead of the prototype slot");
  flops->add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  flops->add_option("--preset", o.preset, "sam2|desk");
  flops->add_flag("--no-prototype", o.no_prototype, "count without the prototype row");
  flops->add_flag("--json", o.json, "machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (gen->parsed()) cmd_generate(o, std::cerr);
    if (train->parsed()) cmd_train(o, std::cerr);
    if (run->parsed()) cmd_run(o, std::cerr);
    if (abl->parsed()) cmd_ablate(o, std::cerr);
    if (flops->parsed()) cmd_flops(o, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
