#pragma once

// Streaming evaluation of whole sequences and the three-way ablation.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "emasam/analytic.hpp"
#include "emasam/metrics.hpp"
#include "emasam/synth.hpp"
#include "emasam/toy_model.hpp"

namespace emasam {

enum class SegmenterKind { kTrained, kAnalytic };

std::string to_string(SegmenterKind k);
SegmenterKind segmenter_from_string(const std::string& s);

struct RunOptions {
  PrototypeMode mode = PrototypeMode::kFull;
  SegmenterKind segmenter = SegmenterKind::kTrained;
  StabilityConfig stability;
  std::size_t sweep_thresholds = 201;  // 0 skips the sweep
  int analytic_calibration_frames = 100;

  void validate() const;
};

struct SequenceReport {
  std::string id;
  PrototypeMode mode = PrototypeMode::kFull;
  std::vector<FrameMetrics> frames;
  std::vector<StepLog> logs;
  std::vector<bool> visible;
  std::vector<OcclusionEvent> events;
  FrameMetrics mean;  // ratios averaged over frames, counts summed
  SweepResult sweep;
  StabilityReport stability;

  std::vector<double> iou_trajectory() const;
};

/// Streams `seq` from a fresh state with a centroid click on frame 1.
SequenceReport run_sequence(const ToyModel& m, const SyntheticSequence& seq, const RunOptions& opt,
                            const std::string& id);

/// Per-seed aggregate (each seed is an independently generated eval set).
struct SeedSummary {
  std::uint64_t seed = 0;
  double dice = 0.0;
  double iou = 0.0;
  double fp_rate = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double spikes = 0.0;          // spike runs, summed over the seed's sequences
  double spike_depth = 0.0;     // mean depth over those runs, 0 if none
  double recovery = 0.0;        // mean recovery latency over all events
};

struct ModeSummary {
  PrototypeMode mode = PrototypeMode::kFull;
  std::vector<SeedSummary> seeds;
  SeedSummary mean;  // across seeds
  SeedSummary se;    // standard error across seeds
};

struct GainPoint {
  double gain = 0.0;
  double mean_iou = 0.0;
  double se_iou = 0.0;
};

struct AblationConfig {
  std::vector<std::uint64_t> seeds;
  int sequences_per_seed = 5;
  DatasetSpec data;
  RunOptions run;  // `mode` is overridden per variant
  std::vector<PrototypeMode> modes = {PrototypeMode::kNoPrototype, PrototypeMode::kFixedMomentum,
                                      PrototypeMode::kFull};
  std::vector<double> gains;  // empty skips the sweep
  std::size_t jobs = 1;

  void validate() const;
};

struct AblationTable {
  std::vector<ModeSummary> modes;
  std::vector<GainPoint> gain_sweep;
  bool low_seed_warning = false;

  const ModeSummary& mode(PrototypeMode m) const;
};

using TaskProgress = std::function<void(const std::string&)>;

AblationTable ablate(const ToyModel& m, const AblationConfig& cfg, const TaskProgress& progress = {});

/// Summary of one seed's sequence reports.
SeedSummary summarize_seed(std::uint64_t seed, const std::vector<SequenceReport>& reports);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads.  The first exception
/// thrown by any task is rethrown after all threads finish.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace emasam
