#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "emasam/ema.hpp"
#include "emasam/linalg.hpp"

namespace emasam {

/// Spatial memory of one frame: a grid of tokens with their coordinates.
struct SpatialMemory {
  Mat tokens;  // (rows*cols) x d, row-major over the grid
  int grid_rows = 0;
  int grid_cols = 0;
  std::vector<GridPos> positions;
  bool occluded = false;

  void validate() const;
  bool operator==(const SpatialMemory&) const = default;
};

struct PointerEntry {
  Vec token;
  std::int64_t frame_index = 0;
  bool occluded = false;

  bool operator==(const PointerEntry&) const = default;
};

/// Keys == values before projection.  `positions[i]` is set only for rows
/// that come from the image grid (eligible for RoPE).
struct KvSet {
  Mat tokens;
  std::vector<std::optional<GridPos>> positions;
  /// Row index of the gain-scaled prototype, if present (always the last row).
  std::optional<std::size_t> prototype_row;

  std::size_t rows() const noexcept { return tokens.rows(); }
};

struct BankConfig {
  std::size_t capacity = 4;
  double gain = 2.0;  // gamma
  double tau = 0.5;   // occlusion threshold

  void validate() const;
  bool operator==(const BankConfig&) const = default;
};

/// FIFO bank of recent spatial memories and pointer tokens plus the
/// never-evicted EMA prototype slot.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(std::size_t dim, BankConfig cfg, Vec occlusion_embedding);

  std::size_t dim() const noexcept { return dim_; }
  const BankConfig& config() const noexcept { return cfg_; }
  const Vec& occlusion_embedding() const noexcept { return occlusion_embedding_; }

  const std::deque<SpatialMemory>& spatial() const noexcept { return spatial_; }
  const std::deque<PointerEntry>& pointers() const noexcept { return pointers_; }
  const EmaPrototype& prototype() const noexcept { return prototype_; }
  void set_prototype(EmaPrototype p);

  std::size_t size() const noexcept { return spatial_.size(); }
  bool empty() const noexcept { return spatial_.empty() && pointers_.empty(); }
  std::int64_t evictions() const noexcept { return evictions_; }

  /// Appends one frame's entries, tagging both with the occlusion embedding
  /// when c < tau, and evicts the oldest entries beyond capacity.  The
  /// prototype slot is never touched.
  void push_frame(SpatialMemory s, PointerEntry p, Confidence c);

  /// Rows: all spatial tokens (oldest frame first), then pointer tokens,
  /// then gain * prototype when requested and initialised.
  KvSet assemble_kv(bool include_prototype = true) const;

  bool operator==(const MemoryBank&) const = default;

  // Direct state restore for checkpoint loading.
  void restore(std::deque<SpatialMemory> spatial, std::deque<PointerEntry> pointers,
               EmaPrototype prototype, std::int64_t evictions);

 private:
  std::size_t dim_ = 0;
  BankConfig cfg_;
  Vec occlusion_embedding_;
  std::deque<SpatialMemory> spatial_;
  std::deque<PointerEntry> pointers_;
  EmaPrototype prototype_;
  std::int64_t evictions_ = 0;
};

/// Seeded random unit vector used as the default occlusion embedding.
Vec default_occlusion_embedding(std::size_t dim, std::uint64_t seed);

// ---- analytic FLOP accounting ----------------------------------------------

struct AttentionShape {
  std::size_t dim = 256;          // d
  std::size_t layers = 4;         // L
  std::size_t queries = 4096;     // N_q
  std::size_t mlp_hidden = 2048;
};

struct BankShape {
  std::size_t memories = 7;            // n
  std::size_t tokens_per_memory = 4096;  // N_s
  std::size_t pointers = 7;
};

/// All counts are floating-point operations with one multiply-add = 2 FLOPs.
struct FlopReport {
  double baseline_flops = 0;        // memory attention without the prototype row
  double with_prototype_flops = 0;  // same, plus prototype row and EMA update
  double attention_delta = 0;       // extra score dot products + weighted value rows
  double projection_delta = 0;      // K/V projection of the extra row
  double ema_flops = 0;             // one EMA update with renormalisation
  double relative_overhead = 0;     // (with - baseline) / baseline
};

/// Per-frame memory-attention FLOPs.  `prototype_enabled == false` yields a
/// zero overhead and with == baseline exactly.
FlopReport flop_estimate(const BankShape& bank, const AttentionShape& model,
                         bool prototype_enabled = true);

/// FLOPs of one EMA update in dimension d: blend (3d), norm (2d + 1), rescale (d).
double ema_update_flops(std::size_t dim);

}  // namespace emasam
