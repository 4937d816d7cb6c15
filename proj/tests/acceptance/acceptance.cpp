// Acceptance run: one PASS/FAIL line per criterion.  The model-based criteria
// share one trained model, cached next to the binary and keyed by the config.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "emasam/config.hpp"
#include "emasam/ema.hpp"
#include "emasam/eval.hpp"
#include "emasam/linalg.hpp"
#include "emasam/memory_bank.hpp"
#include "emasam/metrics.hpp"
#include "emasam/model_io.hpp"
#include "emasam/report.hpp"
#include "emasam/sequence_io.hpp"
#include "emasam/toy_train.hpp"
#include "test_util.hpp"

using namespace emasam;
namespace fs = std::filesystem;
using testutil::random_mat;
using testutil::random_vec;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

// ---- 1: EMA --------------------------------------------------------------------------------

Outcome ema_suite() {
  const auto t0 = Clock::now();
  const EmaConfig cfg;  // alpha0 = 0.9
  CounterRng rng(1);

  double worst_norm = 0.0;
  EmaPrototype m;
  for (int i = 0; i < 100000; ++i) {
    const auto d = static_cast<std::size_t>(testutil::random_int(rng, 2, 64));
    if (m.initialized && m.vector.dim() != d) m = EmaPrototype{};
    const Vec p = random_vec(d, rng, rng.uniform(0.01, 10.0));
    m = ema_update(m, p, Confidence(rng.uniform()), cfg).prototype;
    worst_norm = std::max(worst_norm, std::abs(norm(m.vector.span()) - 1.0));
  }

  bool c1_exact = true;
  bool c0_exact = compute_momentum(cfg, Confidence(0.0)) == 0.9;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t d = 16;
    EmaPrototype prior;
    prior = ema_update(prior, random_vec(d, rng), Confidence(1.0), cfg).prototype;
    const Vec p = random_vec(d, rng, rng.uniform(0.1, 5.0));
    const EmaUpdate one = ema_update(prior, p, Confidence(1.0), cfg);
    c1_exact = c1_exact && one.prototype.vector == normalized(p);
    const EmaUpdate zero = ema_update(prior, p, Confidence(0.0), cfg);
    c0_exact = c0_exact && zero.prototype.last_alpha == 0.9;
  }

  bool monotone = true;
  for (int trial = 0; trial < 200; ++trial) {
    EmaPrototype proto = ema_update(EmaPrototype{}, random_vec(8, rng), Confidence(1.0), cfg).prototype;
    const Vec p = random_vec(8, rng);
    const Confidence c(rng.uniform(0.05, 1.0));
    double prev = prototype_angle_to(proto, p);
    if (prev > std::numbers::pi - 1e-3) continue;
    for (int t = 0; t < 500; ++t) {
      proto = ema_update(proto, p, c, cfg).prototype;
      const double a = prototype_angle_to(proto, p);
      if (a < 1e-9) break;
      monotone = monotone && a < prev;
      prev = a;
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_norm < 1e-9 && c1_exact && c0_exact && monotone && secs < 5.0;
  o.detail = "max|norm-1|=" + sci(worst_norm) + " (<1e-9), c=1 exact=" + (c1_exact ? "yes" : "no") +
             ", c=0 alpha=0.9 exact=" + (c0_exact ? "yes" : "no") + ", monotone=" + (monotone ? "yes" : "no") +
             ", " + fmt(secs, 3) + " s (<5 s)";
  return o;
}

// ---- 2: kernels ----------------------------------------------------------------------------

double bce(double p, double target) {
  return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

Outcome kernel_oracles() {
  const auto t0 = Clock::now();
  CounterRng rng(2);

  double attn_worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto nq = static_cast<std::size_t>(testutil::random_int(rng, 1, 16));
    const auto nk = static_cast<std::size_t>(testutil::random_int(rng, 1, 16));
    const auto d = static_cast<std::size_t>(testutil::random_int(rng, 1, 16));
    const auto dv = static_cast<std::size_t>(testutil::random_int(rng, 1, 16));
    const Mat q = random_mat(nq, d, rng, 2.0), k = random_mat(nk, d, rng, 2.0), v = random_mat(nk, dv, rng);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const Mat a = attention(q, k, v, scale);
    const Mat b = testutil::brute_attention(q, k, v, scale);
    for (std::size_t i = 0; i < a.size(); ++i) attn_worst = std::max(attn_worst, std::abs(a.span()[i] - b.span()[i]));
  }

  double mlp_worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    CounterRng r(seed);
    Mlp m = Mlp::seeded(4, 8, 1, OutputActivation::kSigmoid, r);
    Vec x = random_vec(4, r);
    const double target = r.uniform() < 0.5 ? 0.0 : 1.0;
    auto loss = [&] { return bce(mlp_forward(m, x).output[0], target); };
    const auto fwd = mlp_forward(m, x);
    const double y = fwd.output[0];
    const MlpGrads g = mlp_backward(m, fwd.cache, Vec{(y - target) / (y * (1.0 - y))});
    auto check = [&](double analytic, double* param) {
      const double fd = testutil::central_difference(loss, param);
      if (std::abs(fd) < 1e-9 && std::abs(analytic) < 1e-9) return;  // ReLU kink
      mlp_worst = std::max(mlp_worst, testutil::rel_err(analytic, fd, 1e-8));
    };
    for (std::size_t i = 0; i < m.w1.size(); ++i) check(g.w1.span()[i], &m.w1.span()[i]);
    for (std::size_t i = 0; i < m.b1.dim(); ++i) check(g.b1[i], &m.b1[i]);
    for (std::size_t i = 0; i < m.w2.size(); ++i) check(g.w2.span()[i], &m.w2.span()[i]);
    for (std::size_t i = 0; i < m.b2.dim(); ++i) check(g.b2[i], &m.b2[i]);
    for (std::size_t i = 0; i < x.dim(); ++i) check(g.input[i], &x[i]);
  }

  // whole per-frame pipeline at the default model size, memory included
  const ToyConfig cfg;
  ToyModel model = ToyModel::create(cfg, 3);
  const SyntheticSequence seq = generate(sample_scene(DatasetSpec{}, 0));
  FrameContext ctx;
  for (int k = 0; k < 3; ++k) {
    MemorySource s{extract_patches(seq.frames[static_cast<std::size_t>(k)].pixels, cfg.patch), {}, k == 1};
    for (std::size_t i = 0; i < cfg.tokens(); ++i) s.pooled.push_back(rng.uniform());
    ctx.spatial.push_back(s);
    ctx.pointers.push_back(normalized(random_vec(cfg.dim(), rng)));
  }
  ctx.prototype = normalized(random_vec(cfg.dim(), rng));
  const FrameTarget target{seq.masks[3], true, {centroid_prompt(seq.masks[3])}};
  const TrainConfig tc;
  ToyParams grads = ToyParams::zeros(cfg);
  frame_loss(model, ctx, seq.frames[3].pixels, target, tc, &grads);
  std::vector<std::span<double>> p, g;
  for_each_tensor(model.params, [&](const std::string&, std::span<double> s) { p.push_back(s); });
  for_each_tensor(grads, [&](const std::string&, std::span<double> s) { g.push_back(s); });
  auto loss = [&] { return frame_loss(model, ctx, seq.frames[3].pixels, target, tc, nullptr).total; };
  double pipe_worst = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k)
    for (int probe = 0; probe < 2; ++probe) {
      const auto i = static_cast<std::size_t>(rng.uniform() * static_cast<double>(p[k].size()));
      const double fd = testutil::central_difference(loss, &p[k][i], 1e-6);
      pipe_worst = std::max(pipe_worst, testutil::rel_err(fd, g[k][i]));
    }

  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = attn_worst <= 1e-10 && mlp_worst < 1e-4 && pipe_worst < 1e-3 && secs < 60.0;
  o.detail = "attention max abs err=" + sci(attn_worst) + " (<=1e-10, 1000 cases), mlp rel err=" + sci(mlp_worst) +
             " (<1e-4), pipeline rel err=" + sci(pipe_worst) + " (<1e-3), " + fmt(secs, 3) + " s (<60 s)";
  return o;
}

// ---- 3: metrics ----------------------------------------------------------------------------

Outcome metric_oracle() {
  CounterRng rng(3);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    BinaryMask pred(8, 8), truth(8, 8);
    const double pp = rng.uniform(), pt = rng.uniform();
    for (auto& v : pred.data) v = rng.uniform() < pp;
    for (auto& v : truth.data) v = rng.uniform() < pt;
    double tp = 0, fp = 0, tn = 0, fn = 0;
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c) {
        const bool a = pred.at(r, c) != 0, b = truth.at(r, c) != 0;
        tp += a && b;
        fp += a && !b;
        tn += !a && !b;
        fn += !a && b;
      }
    const FrameMetrics m = frame_metrics(pred, truth);
    const double dice = tp + fp + fn == 0 ? 1.0 : 2 * tp / (2 * tp + fp + fn);
    const double iou = tp + fp + fn == 0 ? 1.0 : tp / (tp + fp + fn);
    const double spec = fp + tn == 0 ? 1.0 : tn / (tn + fp);
    const bool ok = m.tp == tp && m.fp == fp && m.tn == tn && m.fn == fn && m.dice == dice && m.iou == iou &&
                    m.specificity == spec;
    mismatches += !ok;
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in 1000 random 8x8 pairs (exact)"};
}

// ---- trained model ---------------------------------------------------------------------------

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct Trained {
  ToyModel model;
  double train_seconds = 0.0;  // 0 when loaded from the cache
};

Trained trained_model(const RunConfig& c, const fs::path& cache_dir, bool retrain) {
  RunConfig key = c;
  key.eval = EvalConfig{};
  key.run = RunOptions{};
  key.jobs = 1;
  std::ostringstream name;
  name << "model_" << std::hex << fnv1a(dump_run_config(key)) << ".bin";
  const fs::path path = cache_dir / name.str();
  if (!retrain && fs::exists(path)) {
    std::cout << "using cached model " << path.string() << "\n";
    return {load_model(path), 0.0};
  }
  std::cout << "training (" << c.train.sequences << " sequences x " << c.train.epochs << " epochs)\n"
            << std::flush;
  ToyModel m = ToyModel::create(c.model, c.seed);
  const auto t0 = Clock::now();
  train_toy(m, c.train, [](const std::string& s) { std::cout << "  " << s << "\n" << std::flush; });
  const double secs = seconds_since(t0);
  fs::create_directories(cache_dir);
  save_model(m, path);
  return {m, secs};
}

AblationConfig ablation_for(const RunConfig& c, std::size_t jobs) {
  AblationConfig a;
  a.seeds = c.eval_seeds();
  a.sequences_per_seed = c.eval.sequences_per_seed;
  a.data = c.eval.data;
  a.run = c.run;
  a.run.segmenter = SegmenterKind::kTrained;
  a.jobs = jobs;
  return a;
}

void print_table(const AblationTable& t) {
  for (const auto& ms : t.modes)
    std::cout << "  " << std::left << std::setw(15) << to_string(ms.mode) << " dice " << fmt(ms.mean.dice) << " +- "
              << fmt(ms.se.dice, 2) << "  iou " << fmt(ms.mean.iou) << " +- " << fmt(ms.se.iou, 2) << "  fp_rate "
              << sci(ms.mean.fp_rate) << " +- " << sci(ms.se.fp_rate) << "  spikes " << fmt(ms.mean.spikes)
              << "  depth " << fmt(ms.mean.spike_depth) << "  recovery " << fmt(ms.mean.recovery) << "\n";
}

// ---- 4: ordering ---------------------------------------------------------------------------

// a beats b when (a - b) * sign exceeds the larger of the two across-seed SEs
bool beats(double a, double se_a, double b, double se_b, double sign) {
  return (a - b) * sign > std::max(se_a, se_b);
}

Outcome ordering(const AblationTable& t, double seconds) {
  const auto& full = t.mode(PrototypeMode::kFull);
  const auto& fixed = t.mode(PrototypeMode::kFixedMomentum);
  const auto& none = t.mode(PrototypeMode::kNoPrototype);
  const bool iou_fx = beats(full.mean.iou, full.se.iou, fixed.mean.iou, fixed.se.iou, 1.0);
  const bool iou_xn = beats(fixed.mean.iou, fixed.se.iou, none.mean.iou, none.se.iou, 1.0);
  const bool dice = beats(full.mean.dice, full.se.dice, none.mean.dice, none.se.dice, 1.0);
  const bool fp = beats(full.mean.fp_rate, full.se.fp_rate, none.mean.fp_rate, none.se.fp_rate, -1.0);
  Outcome o;
  o.pass = iou_fx && iou_xn && dice && fp && seconds < 1800.0;
  auto yn = [](bool b) { return b ? "yes" : "no"; };
  o.detail = std::string("IoU full>fixed ") + yn(iou_fx) + " (" + fmt(full.mean.iou) + " vs " + fmt(fixed.mean.iou) +
             "), fixed>none " + yn(iou_xn) + " (vs " + fmt(none.mean.iou) + "), Dice full>none " + yn(dice) + " (" +
             fmt(full.mean.dice) + " vs " + fmt(none.mean.dice) + "), FP full<none " + yn(fp) + " (" +
             sci(full.mean.fp_rate) + " vs " + sci(none.mean.fp_rate) + "); margins > max SE; " + fmt(seconds, 4) +
             " s (<1800 s)";
  return o;
}

// ---- 5: stability --------------------------------------------------------------------------

Outcome stability(const AblationTable& t) {
  const auto& full = t.mode(PrototypeMode::kFull);
  const auto& none = t.mode(PrototypeMode::kNoPrototype);
  int good = 0;
  for (std::size_t s = 0; s < full.seeds.size(); ++s)
    good += full.seeds[s].spikes <= none.seeds[s].spikes && full.seeds[s].spike_depth <= none.seeds[s].spike_depth;
  const auto n = static_cast<int>(full.seeds.size());
  const int needed = (9 * n + 9) / 10;  // 18 of 20
  const bool faster = full.mean.recovery < none.mean.recovery;
  Outcome o;
  o.pass = good >= needed && faster;
  o.detail = "spikes and depth full<=none on " + std::to_string(good) + "/" + std::to_string(n) + " seeds (>=" +
             std::to_string(needed) + "), mean recovery " + fmt(full.mean.recovery) + " vs " +
             fmt(none.mean.recovery) + " frames (strictly smaller)";
  return o;
}

// ---- 6: FLOPs ------------------------------------------------------------------------------

Outcome flops() {
  const FlopReport f = flop_estimate(BankShape{}, AttentionShape{}, true);
  const FlopReport off = flop_estimate(BankShape{}, AttentionShape{}, false);
  Outcome o;
  o.pass = f.relative_overhead < 1e-3 && off.relative_overhead == 0.0;
  o.detail = "SAM-2-scale relative overhead " + sci(f.relative_overhead) + " (<1e-3), disabled " +
             fmt(off.relative_overhead) + " (==0)";
  return o;
}

// ---- 7: determinism ------------------------------------------------------------------------

Outcome determinism(const ToyModel& m, const RunConfig& c, const fs::path& scratch) {
  std::vector<std::string> failures;

  AblationConfig small = ablation_for(c, 1);
  small.seeds.resize(std::min<std::size_t>(small.seeds.size(), 3));
  small.sequences_per_seed = 2;
  small.gains = {1.0, 2.0};
  const AblationTable one = ablate(m, small);
  small.jobs = 3;
  const AblationTable three = ablate(m, small);
  if (ablation_csv(one) != ablation_csv(three) || ablation_seeds_csv(one) != ablation_seeds_csv(three) ||
      gain_sweep_csv(one) != gain_sweep_csv(three))
    failures.push_back("ablation csv differs between jobs 1 and 3");

  DatasetSpec data = c.eval.data;
  data.seed = small.seeds.front();
  const SyntheticSequence seq = generate(sample_scene(data, 0));
  std::vector<std::string> csv(2);
  parallel_for(2, 2, [&](std::size_t i) { csv[i] = frames_csv(run_sequence(m, seq, c.run, "s")); });
  if (csv[0] != csv[1] || csv[0] != frames_csv(run_sequence(m, seq, c.run, "s")))
    failures.push_back("frames csv differs across threads");

  fs::remove_all(scratch);
  fs::create_directories(scratch);
  write_sequence(seq, scratch / "seq");
  if (!(read_sequence(scratch / "seq") == seq)) failures.push_back("sequence round trip");
  save_model(m, scratch / "model.bin");
  const ToyModel back = load_model(scratch / "model.bin");
  if (!(back == m) || serialize_model(back) != serialize_model(m)) failures.push_back("model round trip");

  for (auto mode : {PrototypeMode::kFull, PrototypeMode::kFixedMomentum, PrototypeMode::kNoPrototype}) {
    std::vector<StepResult> straight;
    StreamState st = initial_state(m);
    for (std::size_t t = 0; t < seq.length(); ++t) {
      std::vector<PointPrompt> pr;
      if (t == 0) pr.push_back(centroid_prompt(seq.masks[0]));
      straight.push_back(step(m, st, seq.frames[t], pr, mode));
      st = straight.back().state;
    }
    const std::size_t cut = seq.length() / 2;
    save_checkpoint(Checkpoint{"model.bin", model_fingerprint(m), mode, straight[cut - 1].state},
                    scratch / "stream.ckpt");
    const Checkpoint ck = load_checkpoint(scratch / "stream.ckpt");
    check_checkpoint_model(ck, back);
    st = ck.state;
    bool same = true;
    for (std::size_t t = cut; t < seq.length(); ++t) {
      const StepResult r = step(back, st, seq.frames[t], {}, ck.mode);
      same = same && r.output.mask_logits == straight[t].output.mask_logits && r.state == straight[t].state;
      st = r.state;
    }
    if (!same) failures.push_back("checkpoint resume (" + to_string(mode) + ")");
  }
  fs::remove_all(scratch);

  Outcome o;
  o.pass = failures.empty();
  if (o.pass) {
    o.detail = "csv identical for jobs 1/3, sequence + model files bit-exact, checkpoint resume exact in 3 modes";
  } else {
    for (const auto& f : failures) o.detail += (o.detail.empty() ? "" : "; ") + f;
  }
  return o;
}

// ---- 8: neutrality -------------------------------------------------------------------------

Outcome neutrality(const AblationTable& t) {
  const double full = t.mode(PrototypeMode::kFull).mean.dice;
  const double none = t.mode(PrototypeMode::kNoPrototype).mean.dice;
  Outcome o;
  o.pass = std::abs(full - none) < 0.02;
  o.detail = "event-free |Dice(full) - Dice(none)| = " + fmt(std::abs(full - none)) + " (<0.02; " + fmt(full) +
             " vs " + fmt(none) + ")";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EMA-SAM acceptance run"};
  std::string config_path, cache_dir = EMASAM_ACCEPTANCE_CACHE;
  std::size_t jobs = 1;
  bool retrain = false;
  std::vector<int> only, known_gaps;
  app.add_option("--config", config_path, "run config JSON (defaults otherwise)");
  app.add_option("--cache-dir", cache_dir, "where the trained model is cached");
  app.add_option("--jobs", jobs, "evaluation threads");
  app.add_flag("--retrain", retrain, "ignore a cached model");
  app.add_option("--only", only, "run only these criteria");
  app.add_option("--known-gap", known_gaps,
                 "criteria whose failure is documented; still reported as FAIL but not counted in the exit status");
  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig c = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    c.validate();
    auto wanted = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };

    std::vector<std::pair<int, std::string>> names = {
        {1, "ema-correctness"}, {2, "kernel-oracles"}, {3, "metric-oracle"},   {4, "ablation-ordering"},
        {5, "temporal-stability"}, {6, "flop-overhead"}, {7, "determinism"}, {8, "occlusion-free-neutrality"}};
    std::vector<std::optional<Outcome>> results(9);

    if (wanted(1)) results[1] = ema_suite();
    if (wanted(2)) results[2] = kernel_oracles();
    if (wanted(3)) results[3] = metric_oracle();
    if (wanted(6)) results[6] = flops();

    if (wanted(4) || wanted(5) || wanted(7) || wanted(8)) {
      const Trained tm = trained_model(c, cache_dir, retrain);
      if (wanted(4) || wanted(5)) {
        const auto t0 = Clock::now();
        const AblationTable t = ablate(tm.model, ablation_for(c, jobs));
        const double secs = tm.train_seconds + seconds_since(t0);
        std::cout << "occluded eval set, " << c.eval_seeds().size() << " seeds x " << c.eval.sequences_per_seed
                  << " sequences:\n";
        print_table(t);
        if (wanted(4)) results[4] = ordering(t, secs);
        if (wanted(5)) results[5] = stability(t);
      }
      if (wanted(8)) {
        AblationConfig a = ablation_for(c, jobs);
        a.data = c.eval.data.without_events();
        a.modes = {PrototypeMode::kNoPrototype, PrototypeMode::kFull};
        const AblationTable t = ablate(tm.model, a);
        std::cout << "event-free eval set:\n";
        print_table(t);
        results[8] = neutrality(t);
      }
      if (wanted(7)) results[7] = determinism(tm.model, c, fs::path(cache_dir) / "determinism_scratch");
    }

    bool all = true;
    for (const auto& [k, name] : names) {
      if (!results[static_cast<std::size_t>(k)]) continue;
      const Outcome& o = *results[static_cast<std::size_t>(k)];
      const bool gap = std::find(known_gaps.begin(), known_gaps.end(), k) != known_gaps.end();
      all = all && (o.pass || gap);
      std::cout << (o.pass ? "PASS" : "FAIL") << " " << k << " " << name << ": " << o.detail
                << (gap && !o.pass ? " [known gap, excluded from exit status]" : "") << "\n";
    }
    return all ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
