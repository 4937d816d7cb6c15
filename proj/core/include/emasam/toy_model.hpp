#pragma once

// Desk-scale streaming segmenter: patch encoder, point-prompt encoder, mask
// decoder with mask / IoU / occlusion tokens, memory encoder, and the
// per-frame step that ties them to the memory bank and the EMA prototype.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "emasam/ema.hpp"
#include "emasam/image.hpp"
#include "emasam/memory_attention.hpp"
#include "emasam/memory_bank.hpp"

namespace emasam {

enum class ConfidenceSource { kOcclusionToken, kMaskToken };

/// Ablation variants: FIFO bank only, prototype with c forced to 0 in the
/// momentum rule, and full confidence weighting.
enum class PrototypeMode { kNoPrototype, kFixedMomentum, kFull };

std::string to_string(PrototypeMode m);
PrototypeMode prototype_mode_from_string(const std::string& s);
std::string to_string(ConfidenceSource s);
ConfidenceSource confidence_source_from_string(const std::string& s);

struct ToyConfig {
  int height = 64;
  int width = 64;
  int patch = 8;
  MemAttnConfig attn;  // attn.dim is the model width d
  BankConfig bank;
  EmaConfig ema;
  std::size_t confidence_hidden = 32;
  std::size_t fuser_hidden = 64;
  ConfidenceSource confidence_source = ConfidenceSource::kOcclusionToken;
  std::uint64_t occlusion_seed = 7;

  void validate() const;
  std::size_t dim() const noexcept { return attn.dim; }
  int grid_rows() const noexcept { return height / patch; }
  int grid_cols() const noexcept { return width / patch; }
  std::size_t tokens() const noexcept {
    return static_cast<std::size_t>(grid_rows()) * static_cast<std::size_t>(grid_cols());
  }
  std::size_t patch_pixels() const noexcept { return static_cast<std::size_t>(patch * patch); }
};

/// Every trainable tensor of the toy model.
struct ToyParams {
  Mat patch_w;  // d x patch^2
  Vec patch_b;
  Vec prompt_pos, prompt_neg;
  Vec mask_token, iou_token, occ_token;
  MemAttnWeights attn;
  LayerNormParams out_norm;
  Vec iou_w;
  Vec iou_b;  // length 1
  Mlp confidence;  // d -> confidence_hidden -> 1, sigmoid
  Mat mem_align;   // d x d
  Vec mem_lift;    // d (no bias: an empty mask lifts to zero)
  Mlp fuser1, fuser2;  // d -> fuser_hidden -> d, residual

  static ToyParams seeded(const ToyConfig& cfg, std::uint64_t seed);
  /// Same shapes, every entry zero (gradient / optimizer-state accumulator).
  static ToyParams zeros(const ToyConfig& cfg);
};

/// Calls f(name, span) for each tensor in a fixed order.
template <class P, class F>
void for_each_tensor(P& p, F&& f) {
  auto mlp = [&](const std::string& n, auto& m) {
    f(n + ".w1", m.w1.span());
    f(n + ".b1", m.b1.span());
    f(n + ".w2", m.w2.span());
    f(n + ".b2", m.b2.span());
  };
  auto proj = [&](const std::string& n, auto& a) {
    f(n + ".wq", a.wq.span());
    f(n + ".wk", a.wk.span());
    f(n + ".wv", a.wv.span());
    f(n + ".wo", a.wo.span());
  };
  auto ln = [&](const std::string& n, auto& l) {
    f(n + ".gain", l.gain.span());
    f(n + ".bias", l.bias.span());
  };
  f(std::string("patch_w"), p.patch_w.span());
  f(std::string("patch_b"), p.patch_b.span());
  f(std::string("prompt_pos"), p.prompt_pos.span());
  f(std::string("prompt_neg"), p.prompt_neg.span());
  f(std::string("mask_token"), p.mask_token.span());
  f(std::string("iou_token"), p.iou_token.span());
  f(std::string("occ_token"), p.occ_token.span());
  for (std::size_t l = 0; l < p.attn.layers.size(); ++l) {
    const std::string n = "attn." + std::to_string(l);
    auto& layer = p.attn.layers[l];
    ln(n + ".norm_self", layer.norm_self);
    proj(n + ".self", layer.self_attn);
    ln(n + ".norm_cross", layer.norm_cross);
    proj(n + ".cross", layer.cross_attn);
    ln(n + ".norm_mlp", layer.norm_mlp);
    mlp(n + ".mlp", layer.mlp);
  }
  ln("out_norm", p.out_norm);
  f(std::string("iou_w"), p.iou_w.span());
  f(std::string("iou_b"), p.iou_b.span());
  mlp("confidence", p.confidence);
  f(std::string("mem_align"), p.mem_align.span());
  f(std::string("mem_lift"), p.mem_lift.span());
  mlp("fuser1", p.fuser1);
  mlp("fuser2", p.fuser2);
}

std::size_t parameter_count(const ToyParams& p);

struct ToyModel {
  ToyConfig config;
  ToyParams params;
  Vec occlusion_embedding;  // fixed, not trained

  static ToyModel create(const ToyConfig& cfg, std::uint64_t seed);
  bool operator==(const ToyModel& o) const;
};

// ---- data types ----------------------------------------------------------------------

struct FrameEmbedding {
  Mat tokens;  // N x d, row-major over the patch grid
  int grid_rows = 0;
  int grid_cols = 0;
  int patch = 0;

  std::vector<GridPos> positions() const;
};

/// A click at pixel (x = column, y = row).
struct PointPrompt {
  double x = 0.0;
  double y = 0.0;
  bool positive = true;
};

struct DecoderOutput {
  Image mask_logits;  // H x W
  BinaryMask mask;    // sigmoid(logits) > 0.5, i.e. logits > 0
  Vec pointer;        // unit-norm object pointer p_t
  double iou_estimate = 0.0;
  Confidence confidence;
};

// ---- pipeline stages -------------------------------------------------------------------

/// Flattened patches of the frame, one row per patch (N x patch^2).
Mat extract_patches(const Image& pixels, int patch);
FrameEmbedding encode_frame(const ToyModel& m, const Image& pixels);
/// sincos(y / patch, x / patch) + type embedding.
Vec encode_prompt(const ToyModel& m, const PointPrompt& p);

/// Query rows in order: mask, IoU, occlusion tokens, prompt tokens, patch tokens.
QuerySet build_queries(const ToyModel& m, const FrameEmbedding& e,
                       const std::vector<PointPrompt>& prompts);
inline constexpr std::size_t kSpecialTokens = 3;

/// Reads the conditioned query set (before the output norm).
DecoderOutput decode(const ToyModel& m, const Mat& conditioned, const FrameEmbedding& e);

/// Bilinear (half-pixel centres, edge clamp) upsampling of a patch-grid map.
Image upsample_bilinear(const Mat& grid, int height, int width);
/// Transpose of upsample_bilinear: scatters a full-resolution gradient back.
Mat upsample_bilinear_adjoint(const Image& g, int grid_rows, int grid_cols);
/// Patch means of sigmoid(logits).
std::vector<double> pooled_mask(const Image& logits, int patch);

SpatialMemory encode_memory(const ToyModel& m, const FrameEmbedding& e, const Image& mask_logits);
/// Same transformation from the pooled mask directly.
Mat memory_tokens(const ToyModel& m, const Mat& embedding, const std::vector<double>& pooled);

// ---- streaming ---------------------------------------------------------------------------

struct StreamState {
  MemoryBank bank;
  std::int64_t frames_seen = 0;
  /// Last confident object centre; only the analytic segmenter reads it.
  std::optional<GridPos> track_centre;

  bool operator==(const StreamState&) const = default;
};

StreamState initial_state(const ToyModel& m);

/// Per-frame instrumentation; `alpha` is the momentum actually applied.
struct StepLog {
  std::int64_t frame = 0;
  double confidence = 0.0;
  double confidence_used = 0.0;  // value fed to the momentum rule
  std::optional<double> alpha;
  bool prototype_updated = false;
  bool degenerate = false;
  bool tagged_occluded = false;
  std::optional<double> prototype_angle;  // angle(m_t, p_t) after the update
};

struct StepResult {
  DecoderOutput output;
  StreamState state;
  StepLog log;
};

/// encode -> assemble_kv -> memory attention -> decode -> EMA update ->
/// encode_memory -> push.  Throws ConfigError on an unprompted first frame.
StepResult step(const ToyModel& m, const StreamState& state, const Frame& frame,
                const std::vector<PointPrompt>& prompts, PrototypeMode mode);

/// Applies the EMA and bank updates for an already-decoded frame.
StreamState advance_state(const ToyModel& m, const StreamState& state, const FrameEmbedding& e,
                          const DecoderOutput& out, std::int64_t frame_index, PrototypeMode mode,
                          StepLog& log);

}  // namespace emasam
