#include "emasam/eval.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "emasam/toy_train.hpp"

namespace emasam {

std::string to_string(SegmenterKind k) { return k == SegmenterKind::kTrained ? "trained" : "analytic"; }

SegmenterKind segmenter_from_string(const std::string& s) {
  if (s == "trained") return SegmenterKind::kTrained;
  if (s == "analytic") return SegmenterKind::kAnalytic;
  throw ConfigError("unknown segmenter '" + s + "' (expected trained or analytic)");
}

void RunOptions::validate() const {
  stability.validate();
  if (analytic_calibration_frames <= 0) throw ConfigError("run.analytic_calibration_frames must be positive");
}

std::vector<double> SequenceReport::iou_trajectory() const {
  std::vector<double> v;
  v.reserve(frames.size());
  for (const auto& f : frames) v.push_back(f.iou);
  return v;
}

namespace {

FrameMetrics average(const std::vector<FrameMetrics>& fs) {
  FrameMetrics m;
  std::vector<double> d, i, sp, se, fp, mae;
  for (const auto& f : fs) {
    d.push_back(f.dice);
    i.push_back(f.iou);
    sp.push_back(f.specificity);
    se.push_back(f.sensitivity);
    fp.push_back(f.fp_rate);
    mae.push_back(f.mae);
    m.tp += f.tp;
    m.fp += f.fp;
    m.tn += f.tn;
    m.fn += f.fn;
  }
  m.dice = mean_of(d);
  m.iou = mean_of(i);
  m.specificity = mean_of(sp);
  m.sensitivity = mean_of(se);
  m.fp_rate = mean_of(fp);
  m.mae = mean_of(mae);
  return m;
}

}  // namespace

SequenceReport run_sequence(const ToyModel& m, const SyntheticSequence& seq, const RunOptions& opt,
                            const std::string& id) {
  opt.validate();
  if (seq.length() == 0) throw ConfigError("run_sequence: empty sequence " + id);
  SequenceReport rep;
  rep.id = id;
  rep.mode = opt.mode;
  rep.visible = seq.visibility;
  rep.events = seq.events;

  std::optional<AnalyticParams> analytic;
  if (opt.segmenter == SegmenterKind::kAnalytic)
    analytic = calibrate_analytic(seq.spec, opt.analytic_calibration_frames);

  std::vector<Image> logits;
  StreamState st = initial_state(m);
  for (std::size_t t = 0; t < seq.length(); ++t) {
    std::vector<PointPrompt> prompts;
    if (t == 0) prompts.push_back(centroid_prompt(seq.masks[0]));
    StepResult r = analytic ? analytic_step(m, *analytic, st, seq.frames[t], prompts, opt.mode)
                            : step(m, st, seq.frames[t], prompts, opt.mode);
    rep.frames.push_back(frame_metrics(r.output.mask, seq.masks[t]));
    rep.logs.push_back(r.log);
    if (opt.sweep_thresholds > 0) logits.push_back(std::move(r.output.mask_logits));
    st = std::move(r.state);
  }
  rep.mean = average(rep.frames);
  if (opt.sweep_thresholds > 0) {
    const auto thr = linspace_thresholds(opt.sweep_thresholds);
    rep.sweep = threshold_sweep(logits, seq.masks, thr);
  }
  const auto iou = rep.iou_trajectory();
  rep.stability = stability_analysis(iou, seq.events, opt.stability);
  return rep;
}

SeedSummary summarize_seed(std::uint64_t seed, const std::vector<SequenceReport>& reports) {
  if (reports.empty()) throw Error("summarize_seed: no reports");
  SeedSummary s;
  s.seed = seed;
  std::vector<double> d, i, fp, se, sp, depths, rec;
  for (const auto& r : reports) {
    d.push_back(r.mean.dice);
    i.push_back(r.mean.iou);
    fp.push_back(r.mean.fp_rate);
    se.push_back(r.mean.sensitivity);
    sp.push_back(r.mean.specificity);
    s.spikes += static_cast<double>(r.stability.spikes.size());
    for (const auto& k : r.stability.spikes) depths.push_back(k.depth);
    for (const auto& k : r.stability.recoveries) rec.push_back(k.latency);
  }
  s.dice = mean_of(d);
  s.iou = mean_of(i);
  s.fp_rate = mean_of(fp);
  s.sensitivity = mean_of(se);
  s.specificity = mean_of(sp);
  s.spike_depth = depths.empty() ? 0.0 : mean_of(depths);
  s.recovery = rec.empty() ? 0.0 : mean_of(rec);
  return s;
}

void AblationConfig::validate() const {
  if (seeds.empty()) throw ConfigError("ablation.seeds must not be empty");
  if (sequences_per_seed <= 0) throw ConfigError("ablation.sequences_per_seed must be positive");
  if (modes.empty()) throw ConfigError("ablation.modes must not be empty");
  for (double g : gains)
    if (!(g >= 1.0)) throw ConfigError("ablation.gains entries must be >= 1");
  data.validate();
  run.validate();
}

const ModeSummary& AblationTable::mode(PrototypeMode m) const {
  for (const auto& s : modes)
    if (s.mode == m) return s;
  throw Error("ablation table has no row for mode " + to_string(m));
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first) first = std::current_exception();
        next.store(n);
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < std::min(jobs, n); ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

namespace {

SeedSummary across(const std::vector<SeedSummary>& v, bool se) {
  auto agg = [&](auto field) {
    std::vector<double> x;
    for (const auto& s : v) x.push_back(s.*field);
    return se ? standard_error(x) : mean_of(x);
  };
  SeedSummary out;
  out.dice = agg(&SeedSummary::dice);
  out.iou = agg(&SeedSummary::iou);
  out.fp_rate = agg(&SeedSummary::fp_rate);
  out.sensitivity = agg(&SeedSummary::sensitivity);
  out.specificity = agg(&SeedSummary::specificity);
  out.spikes = agg(&SeedSummary::spikes);
  out.spike_depth = agg(&SeedSummary::spike_depth);
  out.recovery = agg(&SeedSummary::recovery);
  return out;
}

}  // namespace

AblationTable ablate(const ToyModel& m, const AblationConfig& cfg, const TaskProgress& progress) {
  cfg.validate();
  const std::size_t ns = cfg.seeds.size();
  const auto per = static_cast<std::size_t>(cfg.sequences_per_seed);

  // eval sets are generated once and shared by every variant
  std::vector<SyntheticSequence> data(ns * per);
  parallel_for(data.size(), cfg.jobs, [&](std::size_t k) {
    DatasetSpec d = cfg.data;
    d.seed = cfg.seeds[k / per];
    data[k] = generate(sample_scene(d, static_cast<int>(k % per)));
  });

  struct Variant {
    PrototypeMode mode;
    std::optional<double> gain;
  };
  std::vector<Variant> variants;
  for (auto mode : cfg.modes) variants.push_back({mode, std::nullopt});
  for (double g : cfg.gains) variants.push_back({PrototypeMode::kFull, g});

  std::vector<ToyModel> models;
  for (const auto& v : variants) {
    ToyModel mv = m;
    if (v.gain) mv.config.bank.gain = *v.gain;
    models.push_back(std::move(mv));
  }

  std::vector<SequenceReport> reports(variants.size() * data.size());
  std::atomic<std::size_t> done{0};
  std::mutex progress_mu;
  parallel_for(reports.size(), cfg.jobs, [&](std::size_t k) {
    const std::size_t vi = k / data.size(), di = k % data.size();
    RunOptions opt = cfg.run;
    opt.mode = variants[vi].mode;
    const std::string id = "seed" + std::to_string(cfg.seeds[di / per]) + "_seq" + std::to_string(di % per);
    reports[k] = run_sequence(models[vi], data[di], opt, id);
    const std::size_t finished = ++done;
    if (progress && finished % data.size() == 0) {
      std::lock_guard<std::mutex> lock(progress_mu);
      progress(std::to_string(finished) + "/" + std::to_string(reports.size()) + " sequence runs");
    }
  });

  auto seed_summaries = [&](std::size_t vi) {
    std::vector<SeedSummary> out;
    for (std::size_t s = 0; s < ns; ++s) {
      const auto first = reports.begin() + static_cast<std::ptrdiff_t>(vi * data.size() + s * per);
      out.push_back(summarize_seed(cfg.seeds[s], std::vector<SequenceReport>(first, first + static_cast<std::ptrdiff_t>(per))));
    }
    return out;
  };

  AblationTable table;
  table.low_seed_warning = ns < 2;
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    auto seeds = seed_summaries(vi);
    if (!variants[vi].gain) {
      ModeSummary ms{variants[vi].mode, seeds, across(seeds, false), across(seeds, true)};
      table.modes.push_back(std::move(ms));
    } else {
      table.gain_sweep.push_back({*variants[vi].gain, across(seeds, false).iou, across(seeds, true).iou});
    }
  }
  return table;
}

}  // namespace emasam
