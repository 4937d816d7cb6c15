#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "commands.hpp"
#include "emasam/model_io.hpp"

using namespace emasam;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"({
  "seed": 4,
  "model": {"height": 16, "width": 16, "patch": 4, "dim": 8, "layers": 1, "mlp_hidden": 12,
            "confidence_hidden": 6, "fuser_hidden": 8, "bank": {"capacity": 2}},
  "train": {"sequences": 2, "epochs": 2, "update_every": 4,
            "data": {"count": 3, "height": 16, "width": 16, "length": 26, "radius_min": 3, "radius_max": 4,
                     "replace_length": 2, "shadow_length": 2, "deformation_events": 0, "distractors": 0,
                     "max_speed": 0.2}},
  "eval": {"data": {"count": 3, "height": 16, "width": 16, "length": 26, "radius_min": 3, "radius_max": 4,
                    "replace_length": 2, "shadow_length": 2, "deformation_events": 0, "distractors": 0,
                     "max_speed": 0.2},
           "num_seeds": 2, "sequences_per_seed": 2, "gains": [1.0, 2.0]},
  "run": {"sweep_thresholds": 11}
})";

struct Workspace {
  fs::path root;
  cli::Overrides base;

  explicit Workspace(const std::string& name) {
    root = fs::temp_directory_path() / ("emasam_test_cli_" + name);
    fs::remove_all(root);
    fs::create_directories(root);
    std::ofstream(root / "config.json") << kTinyConfig;
    base.config_path = (root / "config.json").string();
  }
  cli::Overrides with_out(const std::string& sub) const {
    cli::Overrides o = base;
    o.out = (root / sub).string();
    return o;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Every file under `dir`, relative path -> contents.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

}  // namespace

TEST_CASE("generate is idempotent and refuses to overwrite without --force") {
  Workspace w("generate");
  std::ostringstream log;
  cli::cmd_generate(w.with_out("a"), log);
  cli::cmd_generate(w.with_out("b"), log);
  const auto a = tree(w.root / "a");
  CHECK(a == tree(w.root / "b"));
  CHECK(a.count("train/seq_0002/manifest.json") == 1);
  CHECK(a.count("eval/seq_0002/frame_0026.pgm") == 1);
  CHECK_THROWS_AS(cli::cmd_generate(w.with_out("a"), log), ConfigError);
  auto forced = w.with_out("a");
  forced.force = true;
  cli::cmd_generate(forced, log);
  CHECK(tree(w.root / "a") == a);
}

TEST_CASE("train with zero epochs saves the initial model and an empty curve") {
  Workspace w("train0");
  std::ostringstream log;
  auto o = w.with_out("model");
  o.epochs = 0;
  cli::cmd_train(o, log);
  const RunConfig c = cli::resolve_config(o);
  CHECK(load_model(w.root / "model" / "model.bin") == ToyModel::create(c.model, c.seed));
  CHECK(slurp(w.root / "model" / "loss.csv") == "epoch,loss\n");
}

TEST_CASE("train resume continues to the same model as an uninterrupted run") {
  Workspace w("resume");
  std::ostringstream log;
  cli::cmd_train(w.with_out("straight"), log);

  auto partial = w.with_out("partial");
  partial.epochs = 1;
  cli::cmd_train(partial, log);
  auto resumed = w.with_out("partial");
  resumed.resume = (w.root / "partial").string();
  cli::cmd_train(resumed, log);
  CHECK(slurp(w.root / "partial" / "model.bin") == slurp(w.root / "straight" / "model.bin"));
  CHECK(slurp(w.root / "partial" / "loss.csv") == slurp(w.root / "straight" / "loss.csv"));
}

TEST_CASE("run and ablate outputs do not depend on --jobs") {
  Workspace w("jobs");
  std::ostringstream log;
  cli::cmd_generate(w.with_out("data"), log);
  cli::cmd_train(w.with_out("model"), log);
  for (const char* cmd : {"run", "ablate"}) {
    std::map<std::string, std::string> first;
    for (std::size_t jobs : {1u, 3u}) {
      auto o = w.with_out(std::string(cmd) + std::to_string(jobs));
      o.model = (w.root / "model" / "model.bin").string();
      o.data = (w.root / "data" / "eval").string();
      o.jobs = jobs;
      if (std::string(cmd) == "run")
        cli::cmd_run(o, log);
      else
        cli::cmd_ablate(o, log);
      const auto t = tree(o.out);
      if (jobs == 1)
        first = t;
      else
        CHECK(t == first);
    }
    CHECK_FALSE(first.empty());
  }
}

TEST_CASE("run without a model file fails; analytic mode does not need one") {
  Workspace w("nomodel");
  std::ostringstream log;
  cli::cmd_generate(w.with_out("data"), log);
  auto o = w.with_out("run");
  o.model = (w.root / "missing.bin").string();
  o.data = (w.root / "data" / "eval").string();
  CHECK_THROWS_AS(cli::cmd_run(o, log), ConfigError);
  o.segmenter = "analytic";
  cli::cmd_run(o, log);
  CHECK(fs::exists(w.root / "run" / "summary.json"));
  CHECK(fs::exists(w.root / "run" / "seq_0000.svg"));
}

TEST_CASE("flops prints a machine-readable overhead") {
  cli::Overrides o;
  std::ostringstream out;
  cli::cmd_flops(o, out);
  CHECK(out.str().find("relative_overhead ") != std::string::npos);
  o.no_prototype = true;
  std::ostringstream zero;
  cli::cmd_flops(o, zero);
  CHECK(zero.str().find("relative_overhead 0\n") != std::string::npos);
  o.preset = "huge";
  CHECK_THROWS_AS(cli::cmd_flops(o, out), ConfigError);
}

TEST_CASE("invalid config values name the field") {
  Workspace w("invalid");
  std::ofstream(w.root / "bad.json") << R"({"eval": {"data": {"replace_length": 0}}})";
  auto o = w.with_out("data");
  o.config_path = (w.root / "bad.json").string();
  std::ostringstream log;
  try {
    cli::cmd_generate(o, log);
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("replace_length") != std::string::npos);
  }
}
