#include "emasam/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "emasam/rng.hpp"

namespace emasam {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

double envelope(const DeformationEvent& d, int t) {
  if (t < d.start || t > d.end) return 0.0;
  const double span = static_cast<double>(d.end - d.start + 2);
  const double s = std::sin(std::numbers::pi * static_cast<double>(t - d.start + 1) / span);
  return s * s;
}

Image static_texture(const SceneSpec& spec) {
  Image tex(spec.height, spec.width, spec.background);
  if (spec.texture_amplitude == 0.0) return tex;
  CounterRng rng = CounterRng(spec.seed).fork(7);
  constexpr int kWaves = 3;
  double fr[kWaves], fc[kWaves], ph[kWaves];
  for (int k = 0; k < kWaves; ++k) {
    fr[k] = rng.uniform(0.02, 0.08);
    fc[k] = rng.uniform(0.02, 0.08);
    ph[k] = rng.uniform(0.0, kTwoPi);
  }
  for (int r = 0; r < spec.height; ++r)
    for (int c = 0; c < spec.width; ++c) {
      double s = 0.0;
      for (int k = 0; k < kWaves; ++k) s += std::cos(kTwoPi * (fr[k] * r + fc[k] * c) + ph[k]);
      tex.at(r, c) += spec.texture_amplitude * s / kWaves;
    }
  return tex;
}

/// Multiplicative speckle with mean one: gamma(k, 1/k) samples box-smoothed.
Image speckle_field(const SceneSpec& spec, int t) {
  Image field(spec.height, spec.width, 1.0);
  if (!spec.speckle.enabled) return field;
  CounterRng rng = CounterRng(spec.seed).fork(1000 + static_cast<std::uint64_t>(t));
  const int k = spec.speckle.shape;
  Image raw(spec.height, spec.width);
  for (double& v : raw.data) {
    double s = 0.0;
    for (int i = 0; i < k; ++i) s -= std::log(1.0 - rng.uniform());
    v = s / k;
  }
  const int half = spec.speckle.smoothing / 2;
  if (half == 0) return raw;
  for (int r = 0; r < spec.height; ++r)
    for (int c = 0; c < spec.width; ++c) {
      double s = 0.0;
      int n = 0;
      for (int dr = -half; dr <= half; ++dr)
        for (int dc = -half; dc <= half; ++dc) {
          const int rr = r + dr;
          const int cc = c + dc;
          if (rr < 0 || rr >= spec.height || cc < 0 || cc >= spec.width) continue;
          s += raw.at(rr, cc);
          ++n;
        }
      field.at(r, c) = s / n;
    }
  return field;
}

bool event_overlaps(const OcclusionEvent& a, const OcclusionEvent& b) {
  return a.start <= b.end && b.start <= a.end;
}

}  // namespace

std::string to_string(OcclusionKind k) { return k == OcclusionKind::kShadow ? "shadow" : "replace"; }

OcclusionKind occlusion_kind_from_string(const std::string& s) {
  if (s == "shadow") return OcclusionKind::kShadow;
  if (s == "replace") return OcclusionKind::kReplace;
  throw ConfigError("unknown occlusion kind '" + s + "' (expected shadow|replace)");
}

bool Ellipse::contains(int r, int c) const noexcept {
  const double dr = (r - center_row) / radius_row;
  const double dc = (c - center_col) / radius_col;
  return dr * dr + dc * dc <= 1.0;
}

Ellipse SceneSpec::lesion_at(int t) const {
  const double tt = static_cast<double>(t);
  const double osc = std::sin(kTwoPi * tt / trajectory.period + trajectory.phase);
  Ellipse e;
  e.center_row = trajectory.start_row + trajectory.drift_row * tt + trajectory.amplitude_row * osc;
  e.center_col = trajectory.start_col + trajectory.drift_col * tt + trajectory.amplitude_col * osc;
  double sr = 1.0;
  double sc = 1.0;
  for (const auto& d : deformations) {
    const double w = envelope(d, t);
    sr *= 1.0 + (d.scale_row - 1.0) * w;
    sc *= 1.0 + (d.scale_col - 1.0) * w;
  }
  e.radius_row = radius_row * sr;
  e.radius_col = radius_col * sc;
  return e;
}

const OcclusionEvent* SceneSpec::event_at(int t) const {
  for (const auto& e : occlusions)
    if (t >= e.start && t <= e.end) return &e;
  return nullptr;
}

void SceneSpec::validate() const {
  if (height <= 0 || width <= 0) throw ConfigError("scene.height/width must be positive");
  if (length <= 0) throw ConfigError("scene.length must be positive");
  if (!(radius_row > 0.0) || !(radius_col > 0.0)) throw ConfigError("scene.radius must be positive");
  if (!(trajectory.period > 0.0)) throw ConfigError("scene.trajectory.period must be positive");
  if (!(background >= 0.0 && background <= 1.0)) throw ConfigError("scene.background must lie in [0, 1]");
  if (speckle.enabled && (speckle.shape < 1 || speckle.smoothing < 1 || speckle.smoothing % 2 == 0))
    throw ConfigError("scene.speckle: shape must be >= 1 and smoothing a positive odd width");
  for (const auto& e : occlusions)
    if (e.start < 1 || e.end > length || e.start > e.end)
      throw ConfigError("scene.occlusions: event [" + std::to_string(e.start) + ", " +
                        std::to_string(e.end) + "] outside [1, " + std::to_string(length) + "]");
  for (std::size_t i = 0; i < occlusions.size(); ++i)
    for (std::size_t j = i + 1; j < occlusions.size(); ++j)
      if (event_overlaps(occlusions[i], occlusions[j]))
        throw ConfigError("scene.occlusions: events overlap");
  for (const auto& d : deformations) {
    if (d.start < 1 || d.end > length || d.start > d.end)
      throw ConfigError("scene.deformations: interval outside [1, length]");
    if (!(d.scale_row > 0.0) || !(d.scale_col > 0.0))
      throw ConfigError("scene.deformations: scales must be positive");
  }
  for (const auto& d : distractors)
    if (!(d.shape.radius_row > 0.0) || !(d.shape.radius_col > 0.0))
      throw ConfigError("scene.distractors: radii must be positive");
  for (int t = 1; t <= length; ++t) {
    const Ellipse e = lesion_at(t);
    if (e.center_row - e.radius_row < 0.0 || e.center_row + e.radius_row > height - 1.0 ||
        e.center_col - e.radius_col < 0.0 || e.center_col + e.radius_col > width - 1.0)
      throw ConfigError("scene.trajectory: lesion leaves the frame at t=" + std::to_string(t));
  }
}

BinaryMask rasterize(const Ellipse& e, int height, int width) {
  BinaryMask m(height, width, 0);
  const int r0 = std::max(0, static_cast<int>(std::floor(e.center_row - e.radius_row)));
  const int r1 = std::min(height - 1, static_cast<int>(std::ceil(e.center_row + e.radius_row)));
  const int c0 = std::max(0, static_cast<int>(std::floor(e.center_col - e.radius_col)));
  const int c1 = std::min(width - 1, static_cast<int>(std::ceil(e.center_col + e.radius_col)));
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c)
      if (e.contains(r, c)) m.at(r, c) = 1;
  return m;
}

SyntheticSequence generate(const SceneSpec& spec) {
  spec.validate();
  SyntheticSequence seq;
  seq.spec = spec;
  seq.events = spec.occlusions;
  const Image texture = static_texture(spec);

  for (int t = 1; t <= spec.length; ++t) {
    const OcclusionEvent* ev = spec.event_at(t);
    const bool replaced = ev != nullptr && ev->kind == OcclusionKind::kReplace;
    const bool shadowed = ev != nullptr && ev->kind == OcclusionKind::kShadow;
    const Ellipse lesion = spec.lesion_at(t);
    BinaryMask lesion_mask = rasterize(lesion, spec.height, spec.width);

    Image clean = texture;
    for (const auto& d : spec.distractors) {
      const BinaryMask dm = rasterize(d.shape, spec.height, spec.width);
      for (std::size_t i = 0; i < clean.size(); ++i)
        if (dm.data[i]) clean.data[i] += d.contrast;
    }
    if (!replaced)
      for (std::size_t i = 0; i < clean.size(); ++i)
        if (lesion_mask.data[i]) clean.data[i] += spec.contrast;
    if (shadowed) {
      // Posterior acoustic shadow: a band below the top of the lesion.
      const double top = lesion.center_row - lesion.radius_row - spec.shadow_margin;
      const double half = lesion.radius_col + spec.shadow_margin;
      for (int r = 0; r < spec.height; ++r)
        for (int c = 0; c < spec.width; ++c)
          if (r >= top && std::abs(c - lesion.center_col) <= half) clean.at(r, c) = spec.shadow_level;
    }

    const Image noise = speckle_field(spec, t);
    Frame f;
    f.index = t;
    f.pixels = Image(spec.height, spec.width);
    for (std::size_t i = 0; i < clean.size(); ++i)
      f.pixels.data[i] = quantize(clean.data[i] * noise.data[i]);

    seq.frames.push_back(std::move(f));
    seq.masks.push_back(replaced ? BinaryMask(spec.height, spec.width, 0) : std::move(lesion_mask));
    seq.visibility.push_back(ev == nullptr);
  }
  return seq;
}

Image lesion_template(const SceneSpec& spec, int margin) {
  const int hr = static_cast<int>(std::ceil(spec.radius_row)) + margin;
  const int hc = static_cast<int>(std::ceil(spec.radius_col)) + margin;
  Image tpl(2 * hr + 1, 2 * hc + 1, 0.0);
  const Ellipse e{static_cast<double>(hr), static_cast<double>(hc), spec.radius_row,
                  spec.radius_col};
  for (int r = 0; r < tpl.height; ++r)
    for (int c = 0; c < tpl.width; ++c)
      if (e.contains(r, c)) tpl.at(r, c) = spec.contrast;
  return tpl;
}

void DatasetSpec::validate() const {
  if (count <= 0) throw ConfigError("dataset.count must be positive");
  if (height <= 0 || width <= 0) throw ConfigError("dataset.height/width must be positive");
  if (!(radius_min > 0.0 && radius_max >= radius_min))
    throw ConfigError("dataset.radius_min/radius_max must satisfy 0 < min <= max");
  if (!(contrast_min >= 0.0 && contrast_max >= contrast_min))
    throw ConfigError("dataset.contrast_min/contrast_max must satisfy 0 <= min <= max");
  if (replace_events < 0 || shadow_events < 0 || deformation_events < 0 || distractors < 0)
    throw ConfigError("dataset event counts must be non-negative");
  if (replace_length <= 0 || shadow_length <= 0)
    throw ConfigError("dataset.replace_length/shadow_length must be positive");
  const int needed = 8 + replace_events * (replace_length + 5) + shadow_events * (shadow_length + 5) + 3;
  if (length < needed)
    throw ConfigError("dataset.length " + std::to_string(length) +
                      " too short for the event schedule (needs " + std::to_string(needed) + ")");
}

DatasetSpec DatasetSpec::without_events() const {
  DatasetSpec d = *this;
  d.replace_events = 0;
  d.shadow_events = 0;
  return d;
}

SceneSpec sample_scene(const DatasetSpec& ds, int index) {
  ds.validate();
  CounterRng rng = CounterRng(ds.seed).fork(static_cast<std::uint64_t>(index) + 1);
  SceneSpec s;
  s.height = ds.height;
  s.width = ds.width;
  s.length = ds.length;
  s.texture_amplitude = ds.texture_amplitude;
  s.speckle = ds.speckle;
  s.seed = rng.next_u64();
  s.radius_row = rng.uniform(ds.radius_min, ds.radius_max);
  s.radius_col = rng.uniform(ds.radius_min, ds.radius_max);
  s.contrast = -std::round(rng.uniform(ds.contrast_min, ds.contrast_max) * 255.0) / 255.0;

  // Deformations first: they bound the radius used for the in-bounds margin.
  double max_scale = 1.0;
  for (int k = 0; k < ds.deformation_events; ++k) {
    DeformationEvent d;
    const int len = static_cast<int>(rng.uniform(10.0, 20.0));
    d.start = 1 + static_cast<int>(rng.uniform(0.0, std::max(1.0, ds.length - len - 1.0)));
    d.end = std::min(ds.length, d.start + len);
    const bool squash_rows = rng.uniform() < 0.5;
    const double squash = rng.uniform(0.75, 0.9);
    const double stretch = rng.uniform(1.05, 1.2);
    d.scale_row = squash_rows ? squash : stretch;
    d.scale_col = squash_rows ? stretch : squash;
    max_scale *= stretch;
    s.deformations.push_back(d);
  }

  Trajectory& tr = s.trajectory;
  tr.period = rng.uniform(30.0, 60.0);
  tr.phase = rng.uniform(0.0, kTwoPi);
  const double osc_speed = 0.7 * ds.max_speed;
  tr.amplitude_row = rng.uniform(0.0, osc_speed * tr.period / kTwoPi);
  tr.amplitude_col = rng.uniform(0.0, osc_speed * tr.period / kTwoPi);
  tr.drift_row = rng.uniform(-0.3, 0.3) * ds.max_speed;
  tr.drift_col = rng.uniform(-0.3, 0.3) * ds.max_speed;

  double lo_r = 0.0, hi_r = 0.0, lo_c = 0.0, hi_c = 0.0;
  for (int t = 1; t <= ds.length; ++t) {
    const double osc = std::sin(kTwoPi * t / tr.period + tr.phase);
    const double orow = tr.drift_row * t + tr.amplitude_row * osc;
    const double ocol = tr.drift_col * t + tr.amplitude_col * osc;
    lo_r = std::min(lo_r, orow);
    hi_r = std::max(hi_r, orow);
    lo_c = std::min(lo_c, ocol);
    hi_c = std::max(hi_c, ocol);
  }
  const double mr = s.radius_row * max_scale + 1.0;
  const double mc = s.radius_col * max_scale + 1.0;
  const double row_min = mr - lo_r;
  const double row_max = ds.height - 1.0 - mr - hi_r;
  const double col_min = mc - lo_c;
  const double col_max = ds.width - 1.0 - mc - hi_c;
  if (row_max < row_min || col_max < col_min)
    throw ConfigError("dataset: motion range too large for the frame size");
  tr.start_row = rng.uniform(row_min, row_max);
  tr.start_col = rng.uniform(col_min, col_max);

  // Occlusion schedule: events in random order, separated by >= 5 frames,
  // first event no earlier than frame 9, recovery window of >= 3 frames.
  std::vector<OcclusionEvent> pending;
  for (int k = 0; k < ds.replace_events; ++k)
    pending.push_back({0, ds.replace_length - 1, OcclusionKind::kReplace});
  for (int k = 0; k < ds.shadow_events; ++k)
    pending.push_back({0, ds.shadow_length - 1, OcclusionKind::kShadow});
  for (std::size_t i = pending.size(); i > 1; --i)
    std::swap(pending[i - 1], pending[static_cast<std::size_t>(rng.uniform() * i)]);
  int total = 0;
  for (const auto& e : pending) total += e.end + 1;
  int slack = ds.length - 3 - 8 - total - 5 * static_cast<int>(pending.size() > 0 ? pending.size() - 1 : 0);
  int cursor = 9;
  for (auto& e : pending) {
    const int shift = slack > 0 ? static_cast<int>(rng.uniform() * (slack / 2 + 1)) : 0;
    slack -= shift;
    const int len = e.end + 1;
    e.start = cursor + shift;
    e.end = e.start + len - 1;
    cursor = e.end + 6;
    s.occlusions.push_back(e);
  }

  for (int k = 0; k < ds.distractors; ++k) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      Distractor d;
      d.shape.radius_row = rng.uniform(ds.radius_min, ds.radius_max);
      d.shape.radius_col = rng.uniform(ds.radius_min, ds.radius_max);
      d.shape.center_row = rng.uniform(d.shape.radius_row, ds.height - 1.0 - d.shape.radius_row);
      d.shape.center_col = rng.uniform(d.shape.radius_col, ds.width - 1.0 - d.shape.radius_col);
      d.contrast = -std::round(rng.uniform(ds.contrast_min, ds.contrast_max) * 255.0) / 255.0;
      bool clear = true;
      for (int t = 1; t <= ds.length && clear; ++t) {
        const Ellipse e = s.lesion_at(t);
        const double dist = std::hypot(e.center_row - d.shape.center_row,
                                       e.center_col - d.shape.center_col);
        clear = dist > std::max(e.radius_row, e.radius_col) +
                           std::max(d.shape.radius_row, d.shape.radius_col) + 3.0;
      }
      if (!clear) continue;
      s.distractors.push_back(d);
      break;
    }
  }
  s.validate();
  return s;
}

}  // namespace emasam
