#include <doctest.h>

#include "emasam/memory_bank.hpp"
#include "test_util.hpp"

using namespace emasam;
using testutil::random_mat;
using testutil::random_vec;

namespace {

SpatialMemory make_memory(int rows, int cols, std::size_t d, CounterRng& rng) {
  SpatialMemory s;
  s.grid_rows = rows;
  s.grid_cols = cols;
  s.tokens = random_mat(static_cast<std::size_t>(rows * cols), d, rng);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) s.positions.push_back({r, c});
  return s;
}

EmaPrototype unit_prototype(const Vec& v) {
  EmaPrototype p;
  p.vector = normalized(v);
  p.initialized = true;
  return p;
}

}  // namespace

TEST_CASE("FIFO eviction keeps the newest entries in order") {
  CounterRng rng(1);
  const std::size_t d = 4;
  MemoryBank bank(d, BankConfig{3, 2.0, 0.5}, default_occlusion_embedding(d, 1));
  for (int t = 1; t <= 4; ++t)
    bank.push_frame(make_memory(2, 2, d, rng), PointerEntry{random_vec(d, rng), t, false},
                    Confidence(0.9));
  REQUIRE(bank.size() == 3);
  CHECK(bank.evictions() == 1);
  CHECK(bank.pointers()[0].frame_index == 2);
  CHECK(bank.pointers()[1].frame_index == 3);
  CHECK(bank.pointers()[2].frame_index == 4);
}

TEST_CASE("property: eviction count equals max(0, pushes - capacity)") {
  CounterRng rng(2);
  for (std::size_t cap = 1; cap <= 6; ++cap) {
    MemoryBank bank(4, BankConfig{cap, 2.0, 0.5}, default_occlusion_embedding(4, 2));
    for (int t = 1; t <= 12; ++t) {
      bank.push_frame(make_memory(1, 2, 4, rng), PointerEntry{random_vec(4, rng), t, false},
                      Confidence(rng.uniform()));
      CHECK(bank.evictions() == std::max<std::int64_t>(0, t - static_cast<std::int64_t>(cap)));
      CHECK(bank.size() == std::min<std::size_t>(cap, static_cast<std::size_t>(t)));
      for (std::size_t i = 0; i + 1 < bank.pointers().size(); ++i)
        CHECK(bank.pointers()[i].frame_index + 1 == bank.pointers()[i + 1].frame_index);
    }
  }
}

TEST_CASE("low confidence tags both entries with the occlusion embedding") {
  CounterRng rng(3);
  const std::size_t d = 6;
  const Vec occ = default_occlusion_embedding(d, 9);
  CHECK(std::abs(norm(occ.span()) - 1.0) < 1e-12);
  MemoryBank bank(d, BankConfig{4, 2.0, 0.5}, occ);
  const SpatialMemory s = make_memory(2, 3, d, rng);
  const Vec p = random_vec(d, rng);
  bank.push_frame(s, PointerEntry{p, 1, false}, Confidence(0.2));
  const SpatialMemory& stored = bank.spatial().back();
  CHECK(stored.occluded);
  CHECK(bank.pointers().back().occluded);
  for (std::size_t r = 0; r < s.tokens.rows(); ++r)
    for (std::size_t j = 0; j < d; ++j) CHECK(stored.tokens(r, j) == s.tokens(r, j) + occ[j]);
  for (std::size_t j = 0; j < d; ++j) CHECK(bank.pointers().back().token[j] == p[j] + occ[j]);

  bank.push_frame(s, PointerEntry{p, 2, false}, Confidence(0.5));
  CHECK_FALSE(bank.spatial().back().occluded);
  CHECK(bank.spatial().back().tokens == s.tokens);
}

TEST_CASE("pushes never touch the prototype") {
  CounterRng rng(4);
  MemoryBank bank(4, BankConfig{2, 2.0, 0.5}, default_occlusion_embedding(4, 3));
  const EmaPrototype proto = unit_prototype(random_vec(4, rng));
  bank.set_prototype(proto);
  for (int t = 1; t <= 10; ++t)
    bank.push_frame(make_memory(2, 2, 4, rng), PointerEntry{random_vec(4, rng), t, false},
                    Confidence(rng.uniform()));
  CHECK(bank.prototype() == proto);
}

TEST_CASE("assemble_kv layout") {
  CounterRng rng(5);
  const std::size_t d = 4;
  MemoryBank bank(d, BankConfig{4, 2.0, 0.5}, default_occlusion_embedding(d, 4));
  const KvSet empty = bank.assemble_kv();
  CHECK(empty.rows() == 0);
  CHECK_FALSE(empty.prototype_row.has_value());

  const SpatialMemory s = make_memory(2, 2, d, rng);
  const Vec p = random_vec(d, rng);
  bank.push_frame(s, PointerEntry{p, 1, false}, Confidence(1.0));
  const EmaPrototype proto = unit_prototype(random_vec(d, rng));
  bank.set_prototype(proto);

  const KvSet kv = bank.assemble_kv();
  REQUIRE(kv.rows() == 6);
  for (std::size_t r = 0; r < 4; ++r) {
    REQUIRE(kv.positions[r].has_value());
    CHECK(*kv.positions[r] == s.positions[r]);
    for (std::size_t j = 0; j < d; ++j) CHECK(kv.tokens(r, j) == s.tokens(r, j));
  }
  CHECK_FALSE(kv.positions[4].has_value());
  for (std::size_t j = 0; j < d; ++j) CHECK(kv.tokens(4, j) == p[j]);
  REQUIRE(kv.prototype_row == std::optional<std::size_t>(5));
  CHECK_FALSE(kv.positions[5].has_value());
  for (std::size_t j = 0; j < d; ++j) CHECK(kv.tokens(5, j) == 2.0 * proto.vector[j]);

  const KvSet base = bank.assemble_kv(/*include_prototype=*/false);
  CHECK(base.rows() == 5);
  CHECK(base.tokens == kv.tokens.slice_rows(0, 5));
}

TEST_CASE("property: assemble_kv row count and prototype placement") {
  CounterRng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 4;
    const auto cap = static_cast<std::size_t>(testutil::random_int(rng, 1, 5));
    const double gain = rng.uniform(1.0, 5.0);
    MemoryBank bank(d, BankConfig{cap, gain, 0.5}, default_occlusion_embedding(d, 5));
    const int pushes = testutil::random_int(rng, 0, 8);
    std::size_t spatial_rows = 0;
    for (int t = 1; t <= pushes; ++t)
      bank.push_frame(make_memory(testutil::random_int(rng, 1, 3), 2, d, rng),
                      PointerEntry{random_vec(d, rng), t, false}, Confidence(rng.uniform()));
    for (const auto& s : bank.spatial()) spatial_rows += s.tokens.rows();
    const bool with = rng.uniform() < 0.5;
    if (with) bank.set_prototype(unit_prototype(random_vec(d, rng)));
    const KvSet kv = bank.assemble_kv();
    CHECK(kv.rows() == spatial_rows + bank.pointers().size() + (with ? 1 : 0));
    if (with) {
      REQUIRE(kv.prototype_row.has_value());
      CHECK(*kv.prototype_row == kv.rows() - 1);
      for (std::size_t j = 0; j < d; ++j)
        CHECK(kv.tokens(kv.rows() - 1, j) == gain * bank.prototype().vector[j]);
    }
  }
}

TEST_CASE("dimension and configuration errors") {
  CounterRng rng(7);
  MemoryBank bank(4, BankConfig{}, default_occlusion_embedding(4, 1));
  CHECK_THROWS_AS(bank.push_frame(make_memory(2, 2, 5, rng), PointerEntry{Vec(5), 1, false},
                                  Confidence(1.0)),
                  ShapeError);
  CHECK_THROWS_AS(MemoryBank(4, BankConfig{0, 2.0, 0.5}, Vec(4)), ConfigError);
  CHECK_THROWS_AS(MemoryBank(4, BankConfig{4, 0.5, 0.5}, Vec(4)), ConfigError);
  CHECK_THROWS_AS(MemoryBank(4, BankConfig{4, 2.0, 0.5}, Vec(3)), ShapeError);
}

TEST_CASE("flop estimate at SAM-2 scale stays under 0.1%") {
  const FlopReport r = flop_estimate(BankShape{}, AttentionShape{});
  CHECK(r.relative_overhead < 1e-3);
  CHECK(r.relative_overhead > 0.0);
  // Independent count of the increment: one extra key/value row per layer.
  const double d = 256, nq = 4096, L = 4;
  CHECK(r.attention_delta == nq * 2 * d * 2 * L);
  CHECK(r.with_prototype_flops - r.baseline_flops ==
        doctest::Approx(nq * 2 * d * 2 * L + 2 * d * d * 2 * L + (6 * d + 1)).epsilon(1e-12));
  // Memory rows dominate, so the overhead is close to one row in 7*4096+7.
  const double rows = 7.0 * 4096 + 7;
  CHECK(r.relative_overhead < 1.0 / rows);

  const FlopReport off = flop_estimate(BankShape{}, AttentionShape{}, false);
  CHECK(off.relative_overhead == 0.0);
  CHECK(off.with_prototype_flops == off.baseline_flops);
  CHECK(off.baseline_flops == r.baseline_flops);

  const FlopReport desk = flop_estimate(BankShape{4, 64, 4}, AttentionShape{32, 4, 67, 128});
  CHECK(desk.relative_overhead > 0.0);
  CHECK_THROWS_AS(flop_estimate(BankShape{}, AttentionShape{0, 4, 4096, 2048}), ConfigError);
}
