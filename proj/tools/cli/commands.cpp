#include "commands.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "emasam/model_io.hpp"
#include "emasam/report.hpp"
#include "emasam/sequence_io.hpp"

namespace emasam::cli {

namespace fs = std::filesystem;

RunConfig resolve_config(const Overrides& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  c.apply_seed();
  if (o.mode) c.run.mode = prototype_mode_from_string(*o.mode);
  if (o.segmenter) c.run.segmenter = segmenter_from_string(*o.segmenter);
  if (o.jobs) c.jobs = *o.jobs;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (!o.model.empty()) c.model_path = o.model;
  c.validate();
  return c;
}

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError("output path " + dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw ConfigError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

namespace {

std::string seq_name(int i) {
  std::ostringstream s;
  s << "seq_" << std::setw(4) << std::setfill('0') << i;
  return s.str();
}

fs::path out_or(const Overrides& o, const fs::path& fallback) { return o.out.empty() ? fallback : fs::path(o.out); }

ToyModel model_for(const RunConfig& c) {
  if (c.run.segmenter == SegmenterKind::kAnalytic && !fs::exists(c.resolved_model_path()))
    return ToyModel::create(c.model, c.seed);  // encoder only feeds the pointer
  const fs::path p = c.resolved_model_path();
  if (!fs::exists(p)) throw ConfigError("model file " + p.string() + " does not exist (run `train` first)");
  ToyModel m = load_model(p);
  m.config.bank.gain = c.model.bank.gain;
  m.config.bank.tau = c.model.bank.tau;
  m.config.ema = c.model.ema;
  return m;
}

}  // namespace

void cmd_generate(const Overrides& o, std::ostream& log) {
  const RunConfig c = resolve_config(o);
  const fs::path out = out_or(o, c.resolved_data_root());
  prepare_output_dir(out, o.force);
  struct Split {
    const char* name;
    DatasetSpec spec;
  };
  const Split splits[] = {{"train", c.train.data}, {"eval", c.eval.data}};
  std::string index = "{\n";
  for (const auto& s : splits) {
    std::vector<SyntheticSequence> seqs(static_cast<std::size_t>(s.spec.count));
    parallel_for(seqs.size(), c.jobs, [&](std::size_t i) {
      seqs[i] = generate(sample_scene(s.spec, static_cast<int>(i)));
      write_sequence(seqs[i], out / s.name / seq_name(static_cast<int>(i)));
    });
    index += std::string("  \"") + s.name + "\": {\"count\": " + std::to_string(s.spec.count) +
             ", \"seed\": " + std::to_string(s.spec.seed) + ", \"dir\": \"" + s.name + "\"},\n";
    log << "wrote " << seqs.size() << ' ' << s.name << " sequences\n";
  }
  index += "  \"prefix\": \"seq_\"\n}\n";
  write_text(out / "index.json", index);
  write_text(out / "config.json", dump_run_config(c) + "\n");
}

void cmd_train(const Overrides& o, std::ostream& log) {
  const RunConfig c = resolve_config(o);
  const fs::path out = out_or(o, c.resolved_model_path().parent_path());
  ToyModel model;
  std::optional<TrainState> resume;
  if (!o.resume.empty()) {
    const fs::path from = o.resume;
    model = load_model(from / "model.bin");
    resume = load_train_state(from / "train_state.bin", model);
    if (fs::absolute(from) != fs::absolute(out)) prepare_output_dir(out, o.force);
    log << "resuming after epoch " << resume->epochs_done << '\n';
  } else {
    prepare_output_dir(out, o.force);
    model = ToyModel::create(c.model, c.seed);
  }
  write_text(out / "config.json", dump_run_config(c) + "\n");
  save_model(model, out / "model.bin");

  auto curve = [](const std::vector<double>& loss) {
    std::string s = "epoch,loss\n";
    for (std::size_t i = 0; i < loss.size(); ++i) s += std::to_string(i + 1) + "," + format_number(loss[i]) + "\n";
    return s;
  };
  write_text(out / "loss.csv", curve(resume ? resume->epoch_loss : std::vector<double>{}));
  const TrainReport rep = train_toy(
      model, c.train, [&](const std::string& msg) { log << msg << '\n'; }, resume ? &*resume : nullptr,
      [&](const ToyModel& m, const TrainState& s) {
        save_model(m, out / "model.bin");
        save_train_state(s, m, out / "train_state.bin");
        write_text(out / "loss.csv", curve(s.epoch_loss));
        return true;
      });
  log << "trained " << rep.epoch_loss.size() << " epochs in " << format_number(rep.seconds) << " s; model "
      << (out / "model.bin").string() << '\n';
}

void cmd_run(const Overrides& o, std::ostream& log) {
  const RunConfig c = resolve_config(o);
  const ToyModel m = model_for(c);
  const fs::path data = o.data.empty() ? c.resolved_data_root() / "eval" : fs::path(o.data);
  if (!fs::is_directory(data)) throw ConfigError("data directory " + data.string() + " does not exist");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(data))
    if (e.is_directory() && fs::exists(e.path() / "manifest.json")) dirs.push_back(e.path());
  if (fs::exists(data / "manifest.json")) dirs.push_back(data);
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw ConfigError("no sequences found under " + data.string());

  const fs::path out = out_or(o, fs::path("runs") / to_string(c.run.mode));
  prepare_output_dir(out, o.force);
  std::vector<SequenceReport> reports(dirs.size());
  parallel_for(dirs.size(), c.jobs, [&](std::size_t i) {
    const SyntheticSequence seq = read_sequence(dirs[i]);
    reports[i] = run_sequence(m, seq, c.run, dirs[i].filename().string());
  });
  for (const auto& r : reports) {
    write_text(out / (r.id + ".csv"), frames_csv(r));
    write_text(out / (r.id + ".svg"), iou_svg({{to_string(r.mode), r.iou_trajectory()}}, r.events));
  }
  write_text(out / "summary.json", summary_json(reports));
  double iou = 0.0;
  for (const auto& r : reports) iou += r.mean.iou / static_cast<double>(reports.size());
  log << "ran " << reports.size() << " sequences (" << to_string(c.run.mode) << ", " << to_string(c.run.segmenter)
      << "), mean IoU " << format_number(iou) << '\n';
}

void cmd_ablate(const Overrides& o, std::ostream& log) {
  const RunConfig c = resolve_config(o);
  const ToyModel m = model_for(c);
  AblationConfig a;
  a.seeds = c.eval_seeds();
  a.sequences_per_seed = c.eval.sequences_per_seed;
  a.data = c.eval.data;
  a.run = c.run;
  a.gains = c.eval.gains;
  a.jobs = c.jobs;
  const fs::path out = out_or(o, fs::path("runs") / "ablation");
  prepare_output_dir(out, o.force);
  const AblationTable t = ablate(m, a, [&](const std::string& msg) { log << msg << '\n'; });
  write_text(out / "ablation.csv", ablation_csv(t));
  write_text(out / "ablation_seeds.csv", ablation_seeds_csv(t));
  write_text(out / "gain_sweep.csv", gain_sweep_csv(t));
  const std::string text = ablation_text(t);
  write_text(out / "ablation.txt", text);
  log << text;
}

void cmd_flops(const Overrides& o, std::ostream& out) {
  AttentionShape model;
  BankShape bank;
  if (o.preset == "desk") {
    const RunConfig c = resolve_config(o);
    model.dim = c.model.attn.dim;
    model.layers = c.model.attn.layers;
    model.mlp_hidden = c.model.attn.mlp_hidden;
    model.queries = c.model.tokens() + 3;
    bank.memories = c.model.bank.capacity;
    bank.pointers = c.model.bank.capacity;
    bank.tokens_per_memory = c.model.tokens();
  } else if (o.preset != "sam2") {
    throw ConfigError("--preset must be sam2 or desk");
  }
  const FlopReport f = flop_estimate(bank, model, !o.no_prototype);
  out << (o.json ? flop_json(f, o.preset) : flop_text(f, o.preset));
}

}  // namespace emasam::cli
