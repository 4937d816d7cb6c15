#include "emasam/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json_io.hpp"

namespace emasam {

using detail::json;

DatasetSpec EvalConfig::default_eval_data() {
  DatasetSpec d;
  d.count = 50;
  return d;
}

void RunConfig::apply_seed() {
  train.seed = seed;
  train.data.seed = seed;
  eval.data.seed = seed * 1000 + 1;
}

std::vector<std::uint64_t> RunConfig::eval_seeds() const {
  if (!eval.seeds.empty()) return eval.seeds;
  std::vector<std::uint64_t> s;
  for (std::size_t k = 0; k < eval.num_seeds; ++k) s.push_back(seed * 1000 + 1 + k);
  return s;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  run.validate();
  eval.data.validate();
  if (jobs == 0) throw ConfigError("jobs must be at least 1");
  if (eval.seeds.empty() && eval.num_seeds == 0) throw ConfigError("eval.num_seeds must be positive");
  if (eval.sequences_per_seed <= 0) throw ConfigError("eval.sequences_per_seed must be positive");
  for (double g : eval.gains)
    if (!(g >= 1.0)) throw ConfigError("eval.gains entries must be >= 1");
  if (train.data.height != model.height || train.data.width != model.width)
    throw ConfigError("train.data frame size must match model.height/width");
  if (eval.data.height != model.height || eval.data.width != model.width)
    throw ConfigError("eval.data frame size must match model.height/width");
}

std::filesystem::path RunConfig::resolved_data_root() const {
  if (!data_root.empty()) return data_root;
  if (const char* env = std::getenv("EMASAM_DATA_ROOT"); env && *env) return env;
  return "data";
}

std::filesystem::path RunConfig::resolved_model_path() const {
  if (!model_path.empty()) return model_path;
  return resolved_data_root() / "model" / "model.bin";
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError(origin + ": top level must be an object");
  detail::reject_unknown_keys(j, {"seed", "jobs", "model", "train", "eval", "run", "paths"}, origin);
  RunConfig c;
  detail::read_opt(j, "seed", c.seed, origin);
  detail::read_opt(j, "jobs", c.jobs, origin);
  if (auto it = j.find("model"); it != j.end()) c.model = detail::toy_config_from_json(*it, origin + ".model");
  if (auto it = j.find("train"); it != j.end()) c.train = detail::train_config_from_json(*it, origin + ".train");
  if (auto it = j.find("eval"); it != j.end()) {
    const std::string w = origin + ".eval";
    detail::reject_unknown_keys(*it, {"data", "seeds", "num_seeds", "sequences_per_seed", "gains"}, w);
    if (auto d = it->find("data"); d != it->end()) c.eval.data = detail::dataset_from_json(*d, w + ".data");
    detail::read_opt(*it, "seeds", c.eval.seeds, w);
    detail::read_opt(*it, "num_seeds", c.eval.num_seeds, w);
    detail::read_opt(*it, "sequences_per_seed", c.eval.sequences_per_seed, w);
    detail::read_opt(*it, "gains", c.eval.gains, w);
  }
  if (auto it = j.find("run"); it != j.end()) c.run = detail::run_options_from_json(*it, origin + ".run");
  if (auto it = j.find("paths"); it != j.end()) {
    const std::string w = origin + ".paths";
    detail::reject_unknown_keys(*it, {"data_root", "model"}, w);
    detail::read_opt(*it, "data_root", c.data_root, w);
    detail::read_opt(*it, "model", c.model_path, w);
  }
  c.apply_seed();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

std::string dump_run_config(const RunConfig& c) {
  json eval = {{"data", detail::to_json(c.eval.data)},
               {"num_seeds", c.eval.num_seeds},
               {"sequences_per_seed", c.eval.sequences_per_seed},
               {"gains", c.eval.gains}};
  if (!c.eval.seeds.empty()) eval["seeds"] = c.eval.seeds;
  json j = {{"seed", c.seed},
            {"jobs", c.jobs},
            {"model", detail::to_json(c.model)},
            {"train", detail::to_json(c.train)},
            {"eval", eval},
            {"run", detail::to_json(c.run)},
            {"paths", {{"data_root", c.data_root}, {"model", c.model_path}}}};
  return j.dump(2);
}

}  // namespace emasam
