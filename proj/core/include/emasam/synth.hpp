#pragma once

// Deterministic generator of ultrasound-like sequences with ground truth: a
// moving, deforming speckled lesion plus scheduled occlusion events.

#include <cstdint>
#include <string>
#include <vector>

#include "emasam/image.hpp"

namespace emasam {

enum class OcclusionKind {
  kShadow,   // dark overlay erasing lesion contrast; lesion still present
  kReplace,  // frame swapped for a lesion-free one; lesion absent
};

std::string to_string(OcclusionKind k);
OcclusionKind occlusion_kind_from_string(const std::string& s);

/// Frame interval [start, end], 1-based and inclusive.
struct OcclusionEvent {
  int start = 1;
  int end = 1;
  OcclusionKind kind = OcclusionKind::kReplace;
  bool operator==(const OcclusionEvent&) const = default;
};

/// Anisotropic radius scaling with a sin^2 envelope over [start, end]:
/// the peak factors (scale_row, scale_col) are reached mid-interval.
struct DeformationEvent {
  int start = 1;
  int end = 1;
  double scale_row = 1.0;
  double scale_col = 1.0;
  bool operator==(const DeformationEvent&) const = default;
};

/// center(t) = start + drift * t + amplitude * sin(2 pi t / period + phase), t 1-based.
struct Trajectory {
  double start_row = 32.0;
  double start_col = 32.0;
  double drift_row = 0.0;
  double drift_col = 0.0;
  double amplitude_row = 0.0;
  double amplitude_col = 0.0;
  double period = 40.0;
  double phase = 0.0;
  bool operator==(const Trajectory&) const = default;
};

struct Ellipse {
  double center_row = 0.0;
  double center_col = 0.0;
  double radius_row = 1.0;
  double radius_col = 1.0;

  /// Pixel (r, c) belongs to the ellipse iff
  /// ((r - center_row) / radius_row)^2 + ((c - center_col) / radius_col)^2 <= 1.
  bool contains(int r, int c) const noexcept;
  bool operator==(const Ellipse&) const = default;
};

/// Static lesion-like structure that is not the tracked object.
struct Distractor {
  Ellipse shape;
  double contrast = 0.0;
  bool operator==(const Distractor&) const = default;
};

struct SpeckleParams {
  bool enabled = true;
  int shape = 4;      // gamma shape k (integer): mean of k unit exponentials
  int smoothing = 3;  // box filter width in pixels (odd)
  bool operator==(const SpeckleParams&) const = default;
};

struct SceneSpec {
  int height = 64;
  int width = 64;
  int length = 48;  // T
  double background = 128.0 / 255.0;
  double texture_amplitude = 0.0;  // static low-frequency tissue texture
  Trajectory trajectory;
  double radius_row = 8.0;
  double radius_col = 8.0;
  double contrast = -64.0 / 255.0;
  double shadow_level = 24.0 / 255.0;
  double shadow_margin = 6.0;
  SpeckleParams speckle;
  std::vector<DeformationEvent> deformations;
  std::vector<OcclusionEvent> occlusions;
  std::vector<Distractor> distractors;
  std::uint64_t seed = 1;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// Lesion ellipse at 1-based frame t (trajectory and deformation applied).
  Ellipse lesion_at(int t) const;
  /// Event active at frame t, if any (first match wins).
  const OcclusionEvent* event_at(int t) const;

  bool operator==(const SceneSpec&) const = default;
};

struct SyntheticSequence {
  std::vector<Frame> frames;
  std::vector<BinaryMask> masks;
  std::vector<bool> visibility;
  std::vector<OcclusionEvent> events;
  SceneSpec spec;

  std::size_t length() const noexcept { return frames.size(); }
  bool operator==(const SyntheticSequence&) const = default;
};

SyntheticSequence generate(const SceneSpec& spec);

/// Rasterised ellipse interior.
BinaryMask rasterize(const Ellipse& e, int height, int width);

/// Zero-padded intensity template of the lesion profile (contrast inside the
/// base ellipse, 0 outside), with a `margin`-pixel ring around it.
Image lesion_template(const SceneSpec& spec, int margin = 4);

/// Ranges from which dataset scenes are sampled.
struct DatasetSpec {
  int count = 200;
  int height = 64;
  int width = 64;
  int length = 48;
  double radius_min = 6.0;
  double radius_max = 10.0;
  double contrast_min = 48.0 / 255.0;  // magnitude; lesions are hypoechoic
  double contrast_max = 80.0 / 255.0;
  double max_speed = 0.5;  // pixels per frame of drift + oscillation
  int replace_events = 1;
  int replace_length = 10;
  int shadow_events = 1;
  int shadow_length = 15;
  int deformation_events = 1;
  double texture_amplitude = 0.04;
  int distractors = 1;
  SpeckleParams speckle;
  std::uint64_t seed = 1;

  void validate() const;
  /// Same ranges with the occlusion schedule emptied.
  DatasetSpec without_events() const;
};

/// Scene number `index` of a dataset; a pure function of (spec, index).
SceneSpec sample_scene(const DatasetSpec& spec, int index);

}  // namespace emasam
