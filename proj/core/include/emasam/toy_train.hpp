#pragma once

// Training for the toy pipeline: per-frame loss with a hand-written backward
// pass and an Adam optimiser.  Gradients stop at the frame boundary; memory
// contents are constants for the current frame.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "emasam/synth.hpp"
#include "emasam/toy_model.hpp"

namespace emasam {

struct TrainConfig {
  std::size_t sequences = 48;
  std::size_t epochs = 14;
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double grad_clip = 1.0;  // global L2 norm, 0 disables
  std::size_t update_every = 8;  // frames per optimiser step
  double confidence_weight = 0.5;
  double iou_weight = 0.25;
  /// Soft Dice on the mask probabilities, added to the pixel BCE.
  double dice_weight = 1.0;
  /// Fractions of training sequences run without the prototype row and with
  /// the fixed momentum rule; the rest use full confidence weighting.
  double no_prototype_fraction = 0.25;
  double fixed_momentum_fraction = 0.1;
  /// Fraction of training sequences whose memory masks come from the ground
  /// truth instead of the model's own predictions.
  double teacher_forcing = 0.5;
  std::uint64_t seed = 1;
  DatasetSpec data;

  void validate() const;
};

/// Hard-case IoU with the convention that two empty masks agree perfectly.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

/// Positive click at the centroid of a mask.  Throws if the mask is empty.
PointPrompt centroid_prompt(const BinaryMask& m);

/// Training-side record of one bank entry: the raw inputs, so its memory
/// tokens can be recomputed (and differentiated) under the current weights.
struct MemorySource {
  Mat patches;                  // N x patch^2
  std::vector<double> pooled;   // patch means of the predicted probabilities
  bool occluded = false;
};

/// Everything the memory supplies to one frame.
struct FrameContext {
  std::vector<MemorySource> spatial;  // oldest first
  std::vector<Vec> pointers;          // tagged pointer tokens, oldest first
  std::optional<Vec> prototype;       // unit prototype (gain applied on assembly)
};

struct FrameTarget {
  BinaryMask mask;
  bool visible = true;
  std::vector<PointPrompt> prompts;
};

struct FrameLoss {
  double total = 0.0;
  double mask = 0.0;
  double dice = 0.0;
  double confidence = 0.0;
  double iou = 0.0;
};

/// Memory keys/values exactly as MemoryBank::assemble_kv would lay them out.
KvSet context_kv(const ToyModel& m, const FrameContext& ctx);

/// Forward, loss and (when `grads` is non-null) backward for one frame.
/// Gradients are accumulated, scaled by `grad_scale`.
FrameLoss frame_loss(const ToyModel& m, const FrameContext& ctx, const Image& pixels,
                     const FrameTarget& target, const TrainConfig& tc, ToyParams* grads,
                     double grad_scale = 1.0, DecoderOutput* out = nullptr);

struct SequenceLoss {
  FrameLoss mean;
  std::size_t frames = 0;
};

/// Streams the whole sequence (prompt on frame 1) and averages the frame
/// losses.  Without `flush`, gradients are averaged over the sequence.  With
/// it, gradients are averaged over chunks of tc.update_every frames and
/// `flush` runs after each chunk (it may update the model's weights).
/// With `teacher_forced`, memory entries are encoded from the true masks.
SequenceLoss sequence_loss(const ToyModel& m, const SyntheticSequence& seq, PrototypeMode mode,
                           const TrainConfig& tc, ToyParams* grads,
                           const std::function<void()>& flush = {}, bool teacher_forced = false);

struct AdamState {
  ToyParams m, v;
  std::int64_t t = 0;
};

class AdamOptimizer {
 public:
  AdamOptimizer(const ToyConfig& cfg, const TrainConfig& tc);
  AdamOptimizer(const TrainConfig& tc, AdamState state);
  /// Clips `grads` in place to the configured norm, then updates `params`.
  /// Returns the gradient norm before clipping.
  double step(ToyParams& params, ToyParams& grads);
  std::int64_t steps() const noexcept { return t_; }
  AdamState state() const { return {m_, v_, t_}; }

 private:
  TrainConfig tc_;
  ToyParams m_, v_;
  std::int64_t t_ = 0;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  std::size_t optimizer_steps = 0;
  double seconds = 0.0;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Everything needed to continue training after a completed epoch.
struct TrainState {
  std::size_t epochs_done = 0;
  std::vector<double> epoch_loss;
  AdamState adam;
};

/// Called after every epoch; returning false stops training early.
using EpochHook = std::function<bool(const ToyModel&, const TrainState&)>;

/// Trains `model` in place on scenes drawn from tc.data.  Throws NumericError
/// (naming the epoch and sequence) if the loss stops being finite.
/// With `resume`, training continues from that state (the model must hold the
/// weights saved alongside it) and the result is identical to an
/// uninterrupted run.
TrainReport train_toy(ToyModel& model, const TrainConfig& tc, const ProgressFn& progress = {},
                      const TrainState* resume = nullptr, const EpochHook& on_epoch = {});

}  // namespace emasam
