#include <benchmark/benchmark.h>

#include "emasam/analytic.hpp"
#include "emasam/ema.hpp"
#include "emasam/metrics.hpp"
#include "emasam/toy_train.hpp"

using namespace emasam;

namespace {

Vec random_unit(std::size_t d, CounterRng& rng) {
  Vec v(d);
  for (auto& x : v.span()) x = rng.normal();
  return normalized(v);
}

SyntheticSequence bench_sequence() {
  DatasetSpec d;
  d.seed = 5;
  return generate(sample_scene(d, 0));
}

// Stream state after `frames` steps, so the bank is full.
StreamState warm_state(const ToyModel& m, const SyntheticSequence& seq, std::size_t frames, PrototypeMode mode) {
  StreamState st = initial_state(m);
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<PointPrompt> pr;
    if (t == 0) pr.push_back(centroid_prompt(seq.masks[0]));
    st = step(m, st, seq.frames[t], pr, mode).state;
  }
  return st;
}

}  // namespace

static void BM_EmaUpdate(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  CounterRng rng(1);
  EmaPrototype proto;
  const Vec p = random_unit(d, rng);
  proto = ema_update(proto, random_unit(d, rng), Confidence(1.0), EmaConfig{}).prototype;
  for (auto _ : state) {
    proto = ema_update(proto, p, Confidence(0.7), EmaConfig{}).prototype;
    benchmark::DoNotOptimize(proto.vector.span().data());
  }
}
BENCHMARK(BM_EmaUpdate)->Arg(32)->Arg(256);

static void BM_ToyStep(benchmark::State& state) {
  const auto mode = static_cast<PrototypeMode>(state.range(0));
  const ToyModel m = ToyModel::create(ToyConfig{}, 1);
  const SyntheticSequence seq = bench_sequence();
  const StreamState st = warm_state(m, seq, 8, mode);
  for (auto _ : state) {
    StepResult r = step(m, st, seq.frames[8], {}, mode);
    benchmark::DoNotOptimize(r.output.mask_logits.data.data());
  }
  state.SetLabel(to_string(mode));
}
BENCHMARK(BM_ToyStep)
    ->Arg(static_cast<int>(PrototypeMode::kNoPrototype))
    ->Arg(static_cast<int>(PrototypeMode::kFull))
    ->Unit(benchmark::kMillisecond);

static void BM_MemoryAttention(benchmark::State& state) {
  const ToyModel m = ToyModel::create(ToyConfig{}, 1);
  const SyntheticSequence seq = bench_sequence();
  const StreamState st = warm_state(m, seq, 8, PrototypeMode::kFull);
  const FrameEmbedding e = encode_frame(m, seq.frames[8].pixels);
  const QuerySet q = build_queries(m, e, {});
  const KvSet kv = st.bank.assemble_kv(state.range(0) != 0);
  for (auto _ : state) {
    QuerySet out = mem_attn_stack(q, kv, m.config.attn, m.params.attn);
    benchmark::DoNotOptimize(out.tokens.span().data());
  }
}
BENCHMARK(BM_MemoryAttention)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_FrameMetrics(benchmark::State& state) {
  const SyntheticSequence seq = bench_sequence();
  for (auto _ : state) benchmark::DoNotOptimize(frame_metrics(seq.masks[3], seq.masks[4]));
}
BENCHMARK(BM_FrameMetrics);

static void BM_AnalyticSegment(benchmark::State& state) {
  const ToyModel m = ToyModel::create(ToyConfig{}, 1);
  const SyntheticSequence seq = bench_sequence();
  SceneSpec s = sample_scene(DatasetSpec{}, 0);
  const AnalyticParams p = calibrate_analytic(s, 20);
  for (auto _ : state) {
    DecoderOutput out = analytic_segment(m, p, seq.frames[2].pixels, std::nullopt);
    benchmark::DoNotOptimize(out.mask.data.data());
  }
}
BENCHMARK(BM_AnalyticSegment)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
