#pragma once

// Run configuration shared by every CLI command, read from JSON.
//
// Top level keys: seed, jobs, model, train, eval, run, paths.  Unknown keys
// anywhere are rejected.  `seed` is the single source of randomness: it
// overwrites train.seed, train.data.seed and (unless eval.seeds is given)
// derives the evaluation seeds.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "emasam/eval.hpp"
#include "emasam/synth.hpp"
#include "emasam/toy_model.hpp"
#include "emasam/toy_train.hpp"

namespace emasam {

struct EvalConfig {
  DatasetSpec data = default_eval_data();
  std::vector<std::uint64_t> seeds;  // empty: derived from the run seed
  std::size_t num_seeds = 20;
  int sequences_per_seed = 5;
  std::vector<double> gains = {1.0, 1.5, 2.0, 4.0};

  static DatasetSpec default_eval_data();
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  ToyConfig model;
  TrainConfig train;
  EvalConfig eval;
  RunOptions run;
  std::string data_root;   // empty: $EMASAM_DATA_ROOT, else "data"
  std::string model_path;  // empty: <data root>/model/model.bin

  /// Pushes `seed` into the train and data specs.  Call after changing seed.
  void apply_seed();
  std::vector<std::uint64_t> eval_seeds() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;

  std::filesystem::path resolved_data_root() const;
  std::filesystem::path resolved_model_path() const;
};

RunConfig parse_run_config(const std::string& json_text, const std::string& origin = "config");
RunConfig load_run_config(const std::filesystem::path& path);
std::string dump_run_config(const RunConfig& c);

}  // namespace emasam
