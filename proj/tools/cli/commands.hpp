#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "emasam/config.hpp"

namespace emasam::cli {

/// Flags shared by the subcommands; unset values fall back to the config.
struct Overrides {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> segmenter;
  std::optional<std::size_t> jobs;
  bool force = false;

  std::string model;
  std::string data;
  std::optional<std::size_t> epochs;
  std::string resume;
  std::string preset = "sam2";
  bool no_prototype = false;
  bool json = false;
};

RunConfig resolve_config(const Overrides& o);

/// Refuses to write into a non-empty directory unless `force` is set.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

void cmd_generate(const Overrides& o, std::ostream& log);
void cmd_train(const Overrides& o, std::ostream& log);
void cmd_run(const Overrides& o, std::ostream& log);
void cmd_ablate(const Overrides& o, std::ostream& log);
void cmd_flops(const Overrides& o, std::ostream& out);

}  // namespace emasam::cli
