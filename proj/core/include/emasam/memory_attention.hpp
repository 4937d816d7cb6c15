#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "emasam/linalg.hpp"
#include "emasam/memory_bank.hpp"

namespace emasam {

enum class NormPlacement { kPre, kPost };

struct MemAttnConfig {
  std::size_t layers = 4;
  std::size_t dim = 32;
  std::size_t mlp_hidden = 128;
  double dropout = 0.0;  // only honoured when a dropout stream is supplied
  double pos_scale = 0.1;
  NormPlacement norm = NormPlacement::kPre;
  double rope_base = 10000.0;

  void validate() const;
  RopeParams rope() const { return RopeParams{dim, rope_base}; }
};

/// Single-head attention projections (no biases, so a gain on a K/V row
/// scales its projected key and value exactly).
struct AttnProjections {
  Mat wq, wk, wv, wo;  // each d x d, applied as x W^T
};

struct MemAttnLayerWeights {
  LayerNormParams norm_self;
  AttnProjections self_attn;
  LayerNormParams norm_cross;
  AttnProjections cross_attn;
  LayerNormParams norm_mlp;
  Mlp mlp;  // d -> mlp_hidden -> d, ReLU hidden, identity output
};

struct MemAttnWeights {
  std::vector<MemAttnLayerWeights> layers;

  static MemAttnWeights seeded(const MemAttnConfig& cfg, CounterRng& rng);
  /// All projections and MLP weights zero, norms identity.
  static MemAttnWeights zeros(const MemAttnConfig& cfg);
};

struct QuerySet {
  Mat tokens;
  std::vector<std::optional<GridPos>> positions;

  void validate() const;
};

// ---- caches (needed for the manual backward pass) ---------------------------

struct AttnBlockCache {
  Mat input;      // normalised queries
  Mat q, k, v;    // projected (and rotated) queries / keys / values
  Mat attended;   // softmax(QK^T) V
  AttentionCache attn;
};

struct MemAttnLayerCache {
  Mat x_in;
  LayerNormCache ln_self, ln_cross, ln_mlp;
  AttnBlockCache self_block;
  AttnBlockCache cross_block;
  bool cross_skipped = true;
  MlpRowsCache mlp;
  Mat mid1, mid2;  // residual stream after the first and second sub-steps
  std::vector<double> drop_self, drop_cross, drop_mlp;  // empty when dropout is off
};

struct MemAttnCache {
  std::vector<MemAttnLayerCache> layers;
  std::vector<std::optional<GridPos>> query_positions;
  Mat kv_tokens;
  std::vector<std::optional<GridPos>> kv_positions;
};

/// One memory-attention layer.  Pre-norm:
///   q'  = q + SelfAttn(LN(q))
///   q'' = q' + CrossAttn(LN(q'), kv)       (skipped when kv is empty)
///   out = q'' + MLP(LN(q''))
/// RoPE rotates positioned queries and grid-origin keys; pointer and
/// prototype rows are never rotated.
QuerySet mem_attn_layer(const QuerySet& q, const KvSet& kv, const MemAttnConfig& cfg,
                        const MemAttnLayerWeights& w);

/// Adds pos_scale * sincos(pos) to positioned queries once, then applies the
/// layers in order.
QuerySet mem_attn_stack(const QuerySet& q, const KvSet& kv, const MemAttnConfig& cfg,
                        const MemAttnWeights& w);

/// Stack forward that records everything needed by mem_attn_backward.
/// `dropout_rng` enables dropout (training only); pass nullptr otherwise.
QuerySet mem_attn_stack_forward(const QuerySet& q, const KvSet& kv, const MemAttnConfig& cfg,
                                const MemAttnWeights& w, MemAttnCache& cache,
                                CounterRng* dropout_rng = nullptr);

struct MemAttnBackward {
  Mat queries;  // dL/d(input query tokens)
  Mat kv;       // dL/d(kv tokens), zero rows when cross-attention was skipped
};

/// Accumulates weight gradients into `grads` (same shapes as `w`).
MemAttnBackward mem_attn_backward(const MemAttnConfig& cfg, const MemAttnWeights& w,
                                  const MemAttnCache& cache, const Mat& upstream,
                                  MemAttnWeights& grads);

}  // namespace emasam
