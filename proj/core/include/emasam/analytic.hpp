#pragma once

// Training-free stand-in segmenter: normalised cross-correlation against the
// generator's lesion template, wired into the same bank / EMA state machine
// as the trained model.

#include <optional>
#include <vector>

#include "emasam/synth.hpp"
#include "emasam/toy_model.hpp"

namespace emasam {

struct AnalyticParams {
  Image template_image;
  BinaryMask support;        // template pixels inside the lesion ellipse
  double noise_floor = 0.0;  // NCC peak level reached by lesion-free frames
  double search_radius = 16.0;  // pixels around the tracked centre; <= 0 searches everywhere
  double mask_logit = 8.0;      // magnitude of the emitted +/- logits

  void validate() const;
};

/// Template from `spec` and a noise floor set at the `quantile` of peak NCC
/// over `frames` lesion-free frames drawn with the same texture and speckle.
AnalyticParams calibrate_analytic(const SceneSpec& spec, int frames = 100, double quantile = 0.99);

struct NccPeak {
  double value = 0.0;
  int row = 0;
  int col = 0;
};

/// Best NCC over template centres within `radius` of `centre` (or the whole
/// frame).  Windows are clipped at the border; zero-variance windows score 0.
NccPeak ncc_peak(const Image& frame, const Image& tpl, std::optional<GridPos> centre, double radius);

/// confidence = clamp((peak - floor) / (1 - floor), 0, 1); mask = template
/// support at the peak when the peak clears the noise floor, else empty; pointer = mean of
/// the patch tokens weighted by the pooled mask (all tokens when empty).
DecoderOutput analytic_segment(const ToyModel& m, const AnalyticParams& p, const Image& frame,
                               std::optional<GridPos> centre, NccPeak* peak = nullptr);

/// Same contract as step(): search centre comes from the prompt on frame 1
/// and afterwards from the last confident detection.
StepResult analytic_step(const ToyModel& m, const AnalyticParams& p, const StreamState& state,
                         const Frame& frame, const std::vector<PointPrompt>& prompts, PrototypeMode mode);

}  // namespace emasam
