#pragma once

// Segmentation metrics, threshold sweeps and the frame-wise stability rule.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "emasam/image.hpp"
#include "emasam/synth.hpp"

namespace emasam {

/// Pixel counts and ratios for one predicted mask.  Both-empty frames score
/// dice = iou = 1; specificity is 1 when there are no negatives.
struct FrameMetrics {
  double dice = 0.0;
  double iou = 0.0;
  double specificity = 0.0;
  double sensitivity = 0.0;  // tp / (tp + fn), 1 when the truth is empty
  double fp_rate = 0.0;      // fp / (fp + tn)
  double mae = 0.0;          // (fp + fn) / pixels
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

FrameMetrics frame_metrics(const BinaryMask& pred, const BinaryMask& truth);

/// Pairwise (cascade) summation in the given order.
double pairwise_sum(std::span<const double> v);
double mean_of(std::span<const double> v);
/// Sample standard deviation / sqrt(n); 0 for fewer than two values.
double standard_error(std::span<const double> v);

struct SweepResult {
  double max_dice = 0.0;
  double max_iou = 0.0;
  double max_specificity = 0.0;
  double best_dice_threshold = 0.0;
};

/// Probability thresholds in [0, 1]; pixel is foreground when
/// sigmoid(logit) > threshold.  Maxima over thresholds of the frame-mean metric.
SweepResult threshold_sweep(const std::vector<Image>& logits, const std::vector<BinaryMask>& truths,
                            std::span<const double> thresholds);
/// n evenly spaced thresholds from 0 to 1 inclusive.
std::vector<double> linspace_thresholds(std::size_t n);

// ---- temporal stability ------------------------------------------------------------------

struct StabilityConfig {
  std::size_t window = 15;         // trailing median length
  double drop = 0.2;               // spike when iou < baseline - drop
  double recovery_fraction = 0.9;  // of the pre-event mean

  void validate() const;
};

/// A run of consecutive spike frames (1-based, inclusive).
struct SpikeRun {
  int first_frame = 0;
  int last_frame = 0;
  double depth = 0.0;  // max over the run of baseline - iou
};

struct RecoveryRecord {
  OcclusionEvent event;
  double target = 0.0;  // recovery_fraction * pre-event mean IoU
  /// Frames after the event's last frame before IoU first reaches `target`
  /// (0 = recovered on the first frame after the event).  When IoU never
  /// recovers, latency counts every remaining frame and `censored` is set.
  int latency = 0;
  bool censored = false;
};

struct StabilityReport {
  std::vector<std::optional<double>> baseline;  // per frame; empty for frame 1
  std::vector<SpikeRun> spikes;
  std::vector<RecoveryRecord> recoveries;

  double mean_spike_depth() const;  // 0 when there are no spikes
  double mean_recovery() const;     // 0 when there are no events
};

/// Baseline at frame t is the median of the up to `window` preceding IoU values.
StabilityReport stability_analysis(std::span<const double> iou, const std::vector<OcclusionEvent>& events,
                                   const StabilityConfig& cfg = {});

}  // namespace emasam
