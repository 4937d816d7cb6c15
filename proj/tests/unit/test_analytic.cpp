#include <doctest.h>

#include "emasam/analytic.hpp"
#include "emasam/metrics.hpp"
#include "emasam/toy_train.hpp"

using namespace emasam;

namespace {

SceneSpec clean_scene() {
  SceneSpec s;
  s.speckle.enabled = false;
  s.texture_amplitude = 0.0;
  s.length = 12;
  s.trajectory.start_row = 30.0;
  s.trajectory.start_col = 34.0;
  s.trajectory.drift_col = 1.0;  // whole-pixel steps keep the lesion identical to the template
  s.seed = 4;
  return s;
}

}  // namespace

TEST_CASE("noise-free frame containing the template is found with full confidence") {
  const SceneSpec s = clean_scene();
  const SyntheticSequence seq = generate(s);
  const AnalyticParams p = calibrate_analytic(s, 20);
  const ToyModel m = ToyModel::create(ToyConfig{}, 1);
  for (std::size_t t = 0; t < seq.length(); ++t) {
    const DecoderOutput out = analytic_segment(m, p, seq.frames[t].pixels, std::nullopt);
    CHECK(out.confidence.value() >= 0.99);
    CHECK(mask_iou(out.mask, seq.masks[t]) >= 0.9);
  }
}

TEST_CASE("lesion-free speckle frames stay below the calibrated floor") {
  SceneSpec s;
  s.seed = 99;
  const AnalyticParams p = calibrate_analytic(s, 100);
  CHECK(p.noise_floor > 0.0);
  CHECK(p.noise_floor < 1.0);

  // the floor is a 99th percentile, so a rare noise frame may still clear it
  const ToyModel m = ToyModel::create(ToyConfig{}, 1);
  int low = 0, total = 0;
  for (std::uint64_t seed = 12345; seed < 12355; ++seed) {
    SceneSpec occluded = s;
    occluded.length = 20;
    occluded.occlusions = {{1, 20, OcclusionKind::kReplace}};
    occluded.seed = seed;
    for (const auto& f : generate(occluded).frames) {
      const DecoderOutput out = analytic_segment(m, p, f.pixels, std::nullopt);
      if (out.confidence.value() <= 0.2) ++low;
      ++total;
    }
  }
  CHECK(low >= 0.95 * total);
}

TEST_CASE("all-zero frame gives zero confidence and an empty mask") {
  const SceneSpec s = clean_scene();
  const AnalyticParams p = calibrate_analytic(s, 10);
  const ToyModel m = ToyModel::create(ToyConfig{}, 1);
  const DecoderOutput out = analytic_segment(m, p, Image(64, 64, 0.0), std::nullopt);
  CHECK(out.confidence.value() == 0.0);
  for (auto v : out.mask.data) CHECK(v == 0);
  CHECK(norm(out.pointer.span()) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ncc of a frame with itself as template peaks at its centre") {
  Image tpl(9, 7);
  CounterRng rng(3);
  for (auto& v : tpl.data) v = rng.uniform();
  Image frame(30, 30, 0.0);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 7; ++x) frame.at(10 + y, 12 + x) = tpl.at(y, x);
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 30; ++x)
      if (y < 10 || y >= 19 || x < 12 || x >= 19) frame.at(y, x) = 0.3 * rng.uniform();
  const NccPeak pk = ncc_peak(frame, tpl, std::nullopt, 0.0);
  CHECK(pk.value == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pk.row == 14);
  CHECK(pk.col == 15);
}

TEST_CASE("analytic stream tracks through a clean sequence and tags nothing") {
  const SceneSpec s = clean_scene();
  const SyntheticSequence seq = generate(s);
  const AnalyticParams p = calibrate_analytic(s, 10);
  const ToyModel m = ToyModel::create(ToyConfig{}, 1);
  StreamState st = initial_state(m);
  for (std::size_t t = 0; t < seq.length(); ++t) {
    std::vector<PointPrompt> pr;
    if (t == 0) pr.push_back(centroid_prompt(seq.masks[0]));
    const StepResult r = analytic_step(m, p, st, seq.frames[t], pr, PrototypeMode::kFull);
    CHECK_FALSE(r.log.tagged_occluded);
    CHECK(r.state.track_centre.has_value());
    st = r.state;
  }
  CHECK(st.bank.prototype().initialized);
}

TEST_CASE("analytic step needs a prompt on the first frame") {
  const SceneSpec s = clean_scene();
  const SyntheticSequence seq = generate(s);
  const AnalyticParams p = calibrate_analytic(s, 5);
  const ToyModel m = ToyModel::create(ToyConfig{}, 1);
  CHECK_THROWS_AS(analytic_step(m, p, initial_state(m), seq.frames[0], {}, PrototypeMode::kFull), ConfigError);
}
