#include "emasam/memory_bank.hpp"

#include <cmath>
#include <string>

namespace emasam {

void SpatialMemory::validate() const {
  if (grid_rows <= 0 || grid_cols <= 0) throw ShapeError("spatial memory: empty grid");
  const auto n = static_cast<std::size_t>(grid_rows) * static_cast<std::size_t>(grid_cols);
  if (tokens.rows() != n || positions.size() != n)
    throw ShapeError("spatial memory: token count does not match grid");
  for (const auto& p : positions)
    if (p.row < 0 || p.row >= grid_rows || p.col < 0 || p.col >= grid_cols)
      throw ShapeError("spatial memory: position outside grid");
}

void BankConfig::validate() const {
  if (capacity == 0) throw ConfigError("bank.capacity must be positive");
  // gamma = 1 is admitted so that the gain sweep can include the no-gain point.
  if (!(gain >= 1.0) || !std::isfinite(gain)) throw ConfigError("bank.gain must be >= 1");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("bank.tau must lie in [0, 1]");
}

MemoryBank::MemoryBank(std::size_t dim, BankConfig cfg, Vec occlusion_embedding)
    : dim_(dim), cfg_(cfg), occlusion_embedding_(std::move(occlusion_embedding)) {
  cfg_.validate();
  if (dim_ == 0) throw ShapeError("memory bank: zero dimension");
  if (occlusion_embedding_.dim() != dim_)
    throw ShapeError("memory bank: occlusion embedding dimension mismatch");
}

void MemoryBank::set_prototype(EmaPrototype p) {
  if (p.initialized && p.vector.dim() != dim_)
    throw ShapeError("memory bank: prototype dimension mismatch");
  prototype_ = std::move(p);
}

void MemoryBank::push_frame(SpatialMemory s, PointerEntry p, Confidence c) {
  s.validate();
  if (s.tokens.cols() != dim_ || p.token.dim() != dim_)
    throw ShapeError("push_frame: entry dimension " + std::to_string(s.tokens.cols()) + "/" +
                     std::to_string(p.token.dim()) + " does not match bank dimension " +
                     std::to_string(dim_));
  if (c.value() < cfg_.tau) {
    s.occluded = true;
    p.occluded = true;
    for (std::size_t i = 0; i < s.tokens.rows(); ++i)
      axpy(1.0, occlusion_embedding_.span(), s.tokens.row(i));
    axpy(1.0, occlusion_embedding_.span(), p.token.span());
  }
  spatial_.push_back(std::move(s));
  pointers_.push_back(std::move(p));
  while (spatial_.size() > cfg_.capacity) {
    spatial_.pop_front();
    pointers_.pop_front();
    ++evictions_;
  }
}

KvSet MemoryBank::assemble_kv(bool include_prototype) const {
  std::size_t rows = 0;
  for (const auto& s : spatial_) rows += s.tokens.rows();
  rows += pointers_.size();
  const bool with_proto = include_prototype && prototype_.initialized;
  if (with_proto) ++rows;

  KvSet kv;
  kv.tokens = Mat(rows, dim_);
  kv.positions.reserve(rows);
  std::size_t r = 0;
  for (const auto& s : spatial_) {
    for (std::size_t i = 0; i < s.tokens.rows(); ++i, ++r) {
      kv.tokens.set_row(r, s.tokens.row(i));
      kv.positions.emplace_back(s.positions[i]);
    }
  }
  for (const auto& p : pointers_) {
    kv.tokens.set_row(r++, p.token.span());
    kv.positions.emplace_back(std::nullopt);
  }
  if (with_proto) {
    auto dst = kv.tokens.row(r);
    for (std::size_t j = 0; j < dim_; ++j) dst[j] = cfg_.gain * prototype_.vector[j];
    kv.positions.emplace_back(std::nullopt);
    kv.prototype_row = r;
  }
  return kv;
}

void MemoryBank::restore(std::deque<SpatialMemory> spatial, std::deque<PointerEntry> pointers,
                         EmaPrototype prototype, std::int64_t evictions) {
  if (spatial.size() != pointers.size() || spatial.size() > cfg_.capacity)
    throw FormatError("memory bank restore: inconsistent queue lengths");
  spatial_ = std::move(spatial);
  pointers_ = std::move(pointers);
  set_prototype(std::move(prototype));
  evictions_ = evictions;
}

Vec default_occlusion_embedding(std::size_t dim, std::uint64_t seed) {
  CounterRng rng = CounterRng(seed).fork(0x0CC1);
  Vec v(dim);
  for (double& x : v.span()) x = rng.normal();
  return normalized(v);
}

double ema_update_flops(std::size_t dim) {
  const auto d = static_cast<double>(dim);
  return 3.0 * d + (2.0 * d + 1.0) + d;
}

FlopReport flop_estimate(const BankShape& bank, const AttentionShape& model,
                         bool prototype_enabled) {
  if (model.dim == 0 || model.layers == 0 || model.queries == 0 || bank.tokens_per_memory == 0)
    throw ConfigError("flop_estimate: dimensions must be positive");
  const auto d = static_cast<double>(model.dim);
  const auto nq = static_cast<double>(model.queries);
  const auto h = static_cast<double>(model.mlp_hidden);
  const auto layers = static_cast<double>(model.layers);

  auto per_frame = [&](double memory_rows) {
    const double self_attn = 4.0 * nq * d * d + 2.0 * nq * nq * d;
    const double cross_attn = 2.0 * nq * d * d + 2.0 * memory_rows * d * d +
                              2.0 * nq * memory_rows * d;
    const double mlp = 2.0 * nq * d * h;
    return 2.0 * layers * (self_attn + cross_attn + mlp);
  };

  const double memory_rows = static_cast<double>(bank.memories * bank.tokens_per_memory +
                                                 bank.pointers);
  FlopReport r;
  r.baseline_flops = per_frame(memory_rows);
  if (!prototype_enabled) {
    r.with_prototype_flops = r.baseline_flops;
    return r;
  }
  r.attention_delta = nq * (2.0 * d) * 2.0 * layers;
  r.projection_delta = 2.0 * d * d * 2.0 * layers;
  r.ema_flops = ema_update_flops(model.dim);
  r.with_prototype_flops = per_frame(memory_rows + 1.0) + r.ema_flops;
  r.relative_overhead = (r.with_prototype_flops - r.baseline_flops) / r.baseline_flops;
  return r;
}

}  // namespace emasam
