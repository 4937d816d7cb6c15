#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "emasam/sequence_io.hpp"
#include "emasam/synth.hpp"
#include "test_util.hpp"

using namespace emasam;
namespace fs = std::filesystem;

namespace {

SceneSpec quiet_scene() {
  SceneSpec s;
  s.length = 8;
  s.speckle.enabled = false;
  s.texture_amplitude = 0.0;
  s.trajectory.start_row = 30.0;
  s.trajectory.start_col = 34.0;
  s.trajectory.drift_col = 0.5;
  return s;
}

// Normalised cross-correlation between the template and the frame window
// centred on (row, col).
double correlation_at(const Image& frame, const Image& tpl, int row, int col) {
  const int r0 = row - tpl.height / 2;
  const int c0 = col - tpl.width / 2;
  double tmean = 0, fmean = 0;
  for (int r = 0; r < tpl.height; ++r)
    for (int c = 0; c < tpl.width; ++c) {
      tmean += tpl.at(r, c);
      fmean += frame.at(r0 + r, c0 + c);
    }
  tmean /= static_cast<double>(tpl.size());
  fmean /= static_cast<double>(tpl.size());
  double num = 0, fvar = 0, tvar = 0;
  for (int r = 0; r < tpl.height; ++r)
    for (int c = 0; c < tpl.width; ++c) {
      const double f = frame.at(r0 + r, c0 + c) - fmean;
      const double t = tpl.at(r, c) - tmean;
      num += f * t;
      fvar += f * f;
      tvar += t * t;
    }
  return num / std::sqrt(fvar * tvar);
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("emasam_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("noise-free frames carry the configured contrast exactly") {
  const SceneSpec s = quiet_scene();
  const SyntheticSequence seq = generate(s);
  REQUIRE(seq.length() == 8);
  for (std::size_t t = 0; t < seq.length(); ++t) {
    double in = 0, out = 0;
    std::size_t nin = 0, nout = 0;
    for (std::size_t i = 0; i < seq.masks[t].size(); ++i) {
      if (seq.masks[t].data[i]) {
        in += seq.frames[t].pixels.data[i];
        ++nin;
      } else {
        out += seq.frames[t].pixels.data[i];
        ++nout;
      }
    }
    REQUIRE(nin > 0);
    CHECK(std::abs(in / nin - out / nout - s.contrast) < 1e-12);
    CHECK(seq.visibility[t]);
    CHECK(seq.frames[t].index == static_cast<int>(t) + 1);
  }
}

TEST_CASE("masks are exact ellipse rasterisations") {
  CounterRng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Ellipse e{rng.uniform(-5, 40), rng.uniform(-5, 40), rng.uniform(0.5, 12), rng.uniform(0.5, 12)};
    const BinaryMask m = rasterize(e, 36, 36);
    for (int r = 0; r < 36; ++r)
      for (int c = 0; c < 36; ++c) {
        const double a = (r - e.center_row) / e.radius_row;
        const double b = (c - e.center_col) / e.radius_col;
        CHECK(m.at(r, c) == (a * a + b * b <= 1.0 ? 1 : 0));
      }
  }
}

TEST_CASE("replace frames are lesion-free and uncorrelated with the template") {
  SceneSpec s = quiet_scene();
  s.length = 10;
  s.occlusions = {{5, 5, OcclusionKind::kReplace}, {8, 9, OcclusionKind::kShadow}};
  s.speckle.enabled = true;
  const SyntheticSequence seq = generate(s);
  CHECK(count_nonzero(seq.masks[4]) == 0);
  CHECK_FALSE(seq.visibility[4]);
  const Image tpl = lesion_template(s);
  auto at_lesion = [&](int t) {
    const Ellipse e = s.lesion_at(t);
    return correlation_at(seq.frames[t - 1].pixels, tpl, static_cast<int>(std::lround(e.center_row)),
                          static_cast<int>(std::lround(e.center_col)));
  };
  CHECK(std::abs(at_lesion(5)) < 0.3);
  CHECK(at_lesion(4) > 0.5);
  // shadow frames keep the mask but are not visible
  CHECK(count_nonzero(seq.masks[7]) > 0);
  CHECK(seq.masks[7] == rasterize(s.lesion_at(8), s.height, s.width));
  CHECK_FALSE(seq.visibility[7]);
  CHECK(seq.visibility[9]);
}

TEST_CASE("same seed gives bit-identical sequences; different seeds differ") {
  SceneSpec s = quiet_scene();
  s.speckle.enabled = true;
  s.texture_amplitude = 0.05;
  CHECK(generate(s) == generate(s));
  SceneSpec other = s;
  other.seed = 2;
  CHECK_FALSE(generate(other).frames == generate(s).frames);
}

TEST_CASE("scene validation") {
  SceneSpec s = quiet_scene();
  s.trajectory.drift_col = 5.0;  // leaves the frame
  CHECK_THROWS_AS(generate(s), ConfigError);
  SceneSpec e = quiet_scene();
  e.occlusions = {{0, 3, OcclusionKind::kReplace}};
  CHECK_THROWS_AS(generate(e), ConfigError);
  e.occlusions = {{3, 20, OcclusionKind::kReplace}};
  CHECK_THROWS_AS(generate(e), ConfigError);
  SceneSpec r = quiet_scene();
  r.radius_row = 0.0;
  CHECK_THROWS_AS(generate(r), ConfigError);
}

TEST_CASE("dataset scenes are valid, deterministic and follow the schedule") {
  const DatasetSpec ds;
  for (int i = 0; i < 40; ++i) {
    const SceneSpec s = sample_scene(ds, i);
    CHECK_NOTHROW(s.validate());
    CHECK(s == sample_scene(ds, i));
    int replace = 0, shadow = 0;
    for (const auto& e : s.occlusions) {
      CHECK(e.start >= 9);
      if (e.kind == OcclusionKind::kReplace) {
        ++replace;
        CHECK(e.end - e.start + 1 == ds.replace_length);
      } else {
        ++shadow;
        CHECK(e.end - e.start + 1 == ds.shadow_length);
      }
    }
    CHECK(replace == ds.replace_events);
    CHECK(shadow == ds.shadow_events);
  }
  CHECK(sample_scene(ds.without_events(), 3).occlusions.empty());
}

TEST_CASE("visibility follows the event schedule") {
  const DatasetSpec ds;
  const SyntheticSequence seq = generate(sample_scene(ds, 5));
  for (int t = 1; t <= static_cast<int>(seq.length()); ++t) {
    const OcclusionEvent* ev = seq.spec.event_at(t);
    CHECK(seq.visibility[t - 1] == (ev == nullptr));
    if (ev && ev->kind == OcclusionKind::kReplace) CHECK(count_nonzero(seq.masks[t - 1]) == 0);
    if (!ev || ev->kind == OcclusionKind::kShadow) CHECK(count_nonzero(seq.masks[t - 1]) > 0);
  }
}

TEST_CASE("sequence files round-trip bit-exactly") {
  const SyntheticSequence seq = generate(sample_scene(DatasetSpec{}, 2));
  const fs::path dir = scratch_dir("roundtrip");
  write_sequence(seq, dir);
  const SyntheticSequence back = read_sequence(dir);
  CHECK(back == seq);
  fs::remove_all(dir);
}

TEST_CASE("malformed sequence files give descriptive errors") {
  SceneSpec s = quiet_scene();
  s.length = 4;
  const SyntheticSequence seq = generate(s);
  const fs::path dir = scratch_dir("malformed");
  write_sequence(seq, dir);

  // truncate frame 3
  const fs::path f3 = dir / frame_file_name(3);
  const auto full = fs::file_size(f3);
  fs::resize_file(f3, full - 100);
  try {
    read_sequence(dir);
    FAIL("expected an error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("frame 3") != std::string::npos);
  }

  // manifest with T = 0
  write_sequence(seq, dir);
  {
    std::ifstream in(dir / "manifest.json");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto pos = text.find("\"length\": 4");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 11, "\"length\": 0");
    std::ofstream out(dir / "manifest.json");
    out << text;
  }
  CHECK_THROWS_AS(read_sequence(dir), FormatError);
  CHECK_THROWS_AS(read_sequence(dir / "missing"), FormatError);
  fs::remove_all(dir);
}
