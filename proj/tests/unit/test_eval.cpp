#include <doctest.h>

#include <atomic>

#include "emasam/eval.hpp"
#include "emasam/report.hpp"
#include "toy_fixtures.hpp"

using namespace emasam;
using testutil::small_config;

namespace {

DatasetSpec small_data() {
  DatasetSpec d;
  d.height = 16;
  d.width = 16;
  d.length = 26;
  d.radius_min = 3;
  d.radius_max = 4;
  d.replace_length = 2;
  d.shadow_length = 2;
  d.deformation_events = 0;
  d.distractors = 0;
  d.max_speed = 0.2;
  return d;
}

AblationConfig small_ablation(std::size_t jobs) {
  AblationConfig a;
  a.seeds = {3, 4, 5};
  a.sequences_per_seed = 2;
  a.data = small_data();
  a.run.sweep_thresholds = 11;
  a.gains = {1.0, 3.0};
  a.jobs = jobs;
  return a;
}

}  // namespace

TEST_CASE("ablation output is byte-identical for any job count") {
  const ToyModel m = ToyModel::create(small_config(), 2);
  const AblationTable one = ablate(m, small_ablation(1));
  for (std::size_t jobs : {2u, 5u}) {
    const AblationTable many = ablate(m, small_ablation(jobs));
    CHECK(ablation_csv(many) == ablation_csv(one));
    CHECK(ablation_seeds_csv(many) == ablation_seeds_csv(one));
    CHECK(gain_sweep_csv(many) == gain_sweep_csv(one));
  }
  CHECK(one.modes.size() == 3);
  CHECK(one.gain_sweep.size() == 2);
  CHECK_FALSE(one.low_seed_warning);
}

TEST_CASE("a single seed still produces a table, with a warning") {
  const ToyModel m = ToyModel::create(small_config(), 2);
  AblationConfig a = small_ablation(1);
  a.seeds = {7};
  a.gains.clear();
  const AblationTable t = ablate(m, a);
  CHECK(t.low_seed_warning);
  CHECK(ablation_text(t).find("WARNING: low-seed") != std::string::npos);
  CHECK(t.mode(PrototypeMode::kFull).se.iou == 0.0);
}

TEST_CASE("ablation rejects gains below one") {
  const ToyModel m = ToyModel::create(small_config(), 2);
  AblationConfig a = small_ablation(1);
  a.gains = {0.5};
  CHECK_THROWS_AS(ablate(m, a), ConfigError);
}

TEST_CASE("no-prototype runs never initialise a prototype") {
  const ToyModel m = ToyModel::create(small_config(), 2);
  const SyntheticSequence seq = generate(sample_scene(small_data(), 0));
  RunOptions opt;
  opt.mode = PrototypeMode::kNoPrototype;
  const SequenceReport r = run_sequence(m, seq, opt, "s");
  for (const auto& l : r.logs) {
    CHECK_FALSE(l.prototype_updated);
    CHECK_FALSE(l.alpha.has_value());
  }
}

TEST_CASE("logged momentum follows the confidence emitted on the same frame") {
  const ToyModel m = ToyModel::create(small_config(), 2);
  const SyntheticSequence seq = generate(sample_scene(small_data(), 1));
  RunOptions opt;
  const SequenceReport r = run_sequence(m, seq, opt, "s");
  for (const auto& l : r.logs) {
    CHECK(l.confidence_used == l.confidence);
    if (l.alpha) CHECK(*l.alpha == doctest::Approx(0.9 * (1.0 - l.confidence)).epsilon(1e-15));
  }
  opt.mode = PrototypeMode::kFixedMomentum;
  for (const auto& l : run_sequence(m, seq, opt, "s").logs)
    if (l.alpha) CHECK(*l.alpha == 0.9);
}

TEST_CASE("sequence reports aggregate per-frame metrics") {
  const ToyModel m = ToyModel::create(small_config(), 2);
  const SyntheticSequence seq = generate(sample_scene(small_data(), 2));
  const SequenceReport r = run_sequence(m, seq, RunOptions{}, "s");
  REQUIRE(r.frames.size() == seq.length());
  double iou = 0.0;
  std::size_t tp = 0;
  for (const auto& f : r.frames) {
    iou += f.iou;
    tp += f.tp;
  }
  CHECK(r.mean.iou == doctest::Approx(iou / static_cast<double>(seq.length())));
  CHECK(r.mean.tp == tp);
  CHECK(r.sweep.max_iou >= 0.0);
  CHECK(r.stability.recoveries.size() == seq.events.size());
}

TEST_CASE("parallel_for visits every index once and rethrows task errors") {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(hits.size(), 4, [&](std::size_t i) { ++hits[i]; });
  for (const auto& h : hits) CHECK(h.load() == 1);
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 6) throw NumericError("boom");
                               }),
                  NumericError);
}

TEST_CASE("iou plot shades every event and draws every series") {
  const std::vector<PlotSeries> series = {{"full", {0.9, 0.8, 0.1, 0.7}}, {"no_prototype", {0.9, 0.2, 0.0, 0.3}}};
  const std::vector<OcclusionEvent> events = {{2, 3, OcclusionKind::kReplace}};
  const std::string svg = iou_svg(series, events);
  auto count = [&](const std::string& needle) {
    std::size_t n = 0;
    for (std::size_t p = svg.find(needle); p != std::string::npos; p = svg.find(needle, p + 1)) ++n;
    return n;
  };
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(count("<polyline") == 2);
  CHECK(count("<title>replace 2-3</title>") == 1);
  CHECK(svg.find("Frame-wise IoU vs. ground truth") != std::string::npos);
  CHECK(svg == iou_svg(series, events));
}

TEST_CASE("frames csv has one row per frame") {
  const ToyModel m = ToyModel::create(small_config(), 2);
  const SyntheticSequence seq = generate(sample_scene(small_data(), 3));
  const SequenceReport r = run_sequence(m, seq, RunOptions{}, "s");
  const std::string csv = frames_csv(r);
  CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == seq.length() + 1);
  CHECK(csv.rfind("frame,visible,dice,iou", 0) == 0);
}
