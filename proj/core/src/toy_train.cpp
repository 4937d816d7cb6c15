#include "emasam/toy_train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "toy_internal.hpp"

namespace emasam {

void TrainConfig::validate() const {
  if (sequences == 0) throw ConfigError("train.sequences must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train: Adam betas must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ConfigError("train.adam_epsilon must be positive");
  if (update_every == 0) throw ConfigError("train.update_every must be positive");
  if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip must be non-negative");
  if (!(confidence_weight >= 0.0) || !(iou_weight >= 0.0) || !(dice_weight >= 0.0))
    throw ConfigError("train: loss weights must be non-negative");
  if (!(no_prototype_fraction >= 0.0) || !(fixed_momentum_fraction >= 0.0) ||
      no_prototype_fraction + fixed_momentum_fraction > 1.0)
    throw ConfigError("train: mode fractions must be non-negative and sum to at most 1");
  if (!(teacher_forcing >= 0.0 && teacher_forcing <= 1.0))
    throw ConfigError("train.teacher_forcing must lie in [0, 1]");
  data.validate();
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw ShapeError("mask_iou: shape mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

PointPrompt centroid_prompt(const BinaryMask& m) {
  double sr = 0, sc = 0;
  std::size_t n = 0;
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c)
      if (m.at(r, c)) {
        sr += r;
        sc += c;
        ++n;
      }
  if (n == 0) throw ConfigError("centroid_prompt: empty mask");
  return PointPrompt{sc / static_cast<double>(n), sr / static_cast<double>(n), true};
}

namespace {

void add_to(std::span<double> dst, std::span<const double> src, double s = 1.0) { axpy(s, src, dst); }

void add_mlp_grads(Mlp& dst, const MlpGrads& g) {
  add_to(dst.w1.span(), g.w1.span());
  add_to(dst.b1.span(), g.b1.span());
  add_to(dst.w2.span(), g.w2.span());
  add_to(dst.b2.span(), g.b2.span());
}

Mat source_embedding(const ToyModel& m, const MemorySource& s) { return detail::embed_patches(m, s.patches); }

/// dL/dE for the patch embedding E = P W^T + b, accumulated into grads.
void backprop_patch_embed(const Mat& patches, const Mat& d_embed, ToyParams& g) {
  accumulate_tn(d_embed, patches, g.patch_w);
  accumulate_column_sums(d_embed, g.patch_b.span());
}

}  // namespace

KvSet context_kv(const ToyModel& m, const FrameContext& ctx) {
  const std::size_t d = m.config.dim();
  const std::size_t n = m.config.tokens();
  const std::size_t rows = ctx.spatial.size() * n + ctx.pointers.size() + (ctx.prototype ? 1 : 0);
  KvSet kv;
  kv.tokens = Mat(rows, d);
  kv.positions.reserve(rows);
  const FrameEmbedding shape{Mat(), m.config.grid_rows(), m.config.grid_cols(), m.config.patch};
  const auto pos = shape.positions();
  std::size_t r = 0;
  for (const auto& s : ctx.spatial) {
    Mat tok = memory_tokens(m, source_embedding(m, s), s.pooled);
    for (std::size_t i = 0; i < n; ++i, ++r) {
      kv.tokens.set_row(r, tok.row(i));
      if (s.occluded) axpy(1.0, m.occlusion_embedding.span(), kv.tokens.row(r));
      kv.positions.emplace_back(pos[i]);
    }
  }
  for (const auto& p : ctx.pointers) {
    kv.tokens.set_row(r++, p.span());
    kv.positions.emplace_back(std::nullopt);
  }
  if (ctx.prototype) {
    kv.tokens.set_row(r, scaled(*ctx.prototype, m.config.bank.gain).span());
    kv.positions.emplace_back(std::nullopt);
    kv.prototype_row = r;
  }
  return kv;
}

FrameLoss frame_loss(const ToyModel& m, const FrameContext& ctx, const Image& pixels,
                     const FrameTarget& target, const TrainConfig& tc, ToyParams* grads,
                     double grad_scale, DecoderOutput* out_ptr) {
  const ToyConfig& cfg = m.config;
  const std::size_t n = cfg.tokens();
  const std::size_t d = cfg.dim();
  if (target.mask.height != pixels.height || target.mask.width != pixels.width) throw ShapeError("frame_loss: target mask shape mismatch");

  // ---- forward ----
  const Mat patches = extract_patches(pixels, cfg.patch);
  FrameEmbedding e{detail::embed_patches(m, patches), cfg.grid_rows(), cfg.grid_cols(), cfg.patch};
  const QuerySet q = build_queries(m, e, target.prompts);

  std::vector<Mat> src_embed(ctx.spatial.size());
  std::vector<detail::MemEncCache> src_cache(ctx.spatial.size());
  KvSet kv;
  {
    const std::size_t rows = ctx.spatial.size() * n + ctx.pointers.size() + (ctx.prototype ? 1 : 0);
    kv.tokens = Mat(rows, d);
    const auto pos = e.positions();
    std::size_t r = 0;
    for (std::size_t k = 0; k < ctx.spatial.size(); ++k) {
      src_embed[k] = source_embedding(m, ctx.spatial[k]);
      Mat tok = detail::memory_tokens_forward(m, src_embed[k], ctx.spatial[k].pooled, &src_cache[k]);
      for (std::size_t i = 0; i < n; ++i, ++r) {
        kv.tokens.set_row(r, tok.row(i));
        if (ctx.spatial[k].occluded) axpy(1.0, m.occlusion_embedding.span(), kv.tokens.row(r));
        kv.positions.emplace_back(pos[i]);
      }
    }
    for (const auto& p : ctx.pointers) {
      kv.tokens.set_row(r++, p.span());
      kv.positions.emplace_back(std::nullopt);
    }
    if (ctx.prototype) {
      kv.tokens.set_row(r, scaled(*ctx.prototype, cfg.bank.gain).span());
      kv.positions.emplace_back(std::nullopt);
      kv.prototype_row = r;
    }
  }

  MemAttnCache attn_cache;
  const QuerySet cond = mem_attn_stack_forward(q, kv, cfg.attn, m.params.attn, attn_cache);
  detail::DecodeCache dc;
  DecoderOutput out = detail::decode_forward(m, cond.tokens, e, &dc);

  // ---- loss ----
  FrameLoss loss;
  const auto npx = static_cast<double>(pixels.size());
  Image dz(cfg.height, cfg.width);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double z = out.mask_logits.data[i];
    const double y = target.mask.data[i] ? 1.0 : 0.0;
    // log(1 + e^z) - y z, written stably
    loss.mask += (std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)))) / npx;
    dz.data[i] = (sigmoid(z) - y) / npx;
  }
  {
    // 1 - (2 sum(p y) + 1) / (sum(p) + sum(y) + 1); the +1 scores an empty
    // prediction on an empty truth as perfect
    double inter = 0.0, psum = 0.0, ysum = 0.0;
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      const double p = sigmoid(out.mask_logits.data[i]);
      const double y = target.mask.data[i] ? 1.0 : 0.0;
      inter += p * y;
      psum += p;
      ysum += y;
    }
    const double num = 2.0 * inter + 1.0, den = psum + ysum + 1.0;
    loss.dice = 1.0 - num / den;
    if (tc.dice_weight > 0.0)
      for (std::size_t i = 0; i < pixels.size(); ++i) {
        const double p = sigmoid(out.mask_logits.data[i]);
        const double y = target.mask.data[i] ? 1.0 : 0.0;
        dz.data[i] -= tc.dice_weight * (2.0 * y * den - num) / (den * den) * p * (1.0 - p);
      }
  }
  const double c = dc.confidence.output[0];
  const double v = target.visible ? 1.0 : 0.0;
  const double cc = std::clamp(c, 1e-12, 1.0 - 1e-12);
  loss.confidence = -(v * std::log(cc) + (1.0 - v) * std::log(1.0 - cc));
  const double iou_target = mask_iou(out.mask, target.mask);
  const double s = out.iou_estimate;
  loss.iou = (s - iou_target) * (s - iou_target);
  loss.total = loss.mask + tc.dice_weight * loss.dice + tc.confidence_weight * loss.confidence + tc.iou_weight * loss.iou;
  if (out_ptr) *out_ptr = out;
  if (!grads) return loss;

  // ---- backward ----
  ToyParams& g = *grads;
  const double gs = grad_scale;
  Mat dY(dc.normed.rows(), d);
  {
    Mat dgrid = upsample_bilinear_adjoint(dz, cfg.grid_rows(), cfg.grid_cols());
    const auto y0 = dc.normed.row(0);
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = gs * dgrid.span()[i];
      axpy(gi, dc.normed.row(dc.patch_row0 + i), dY.row(0));
      axpy(gi, y0, dY.row(dc.patch_row0 + i));
    }
  }
  {
    const double dpre = gs * tc.iou_weight * 2.0 * (s - iou_target) * s * (1.0 - s);
    axpy(dpre, m.params.iou_w.span(), dY.row(1));
    axpy(dpre, dc.normed.row(1), g.iou_w.span());
    g.iou_b[0] += dpre;
  }
  {
    const double dc_dc = gs * tc.confidence_weight * (c - v) / std::max(c * (1.0 - c), 1e-12);
    const MlpGrads mg = mlp_backward(m.params.confidence, dc.confidence, Vec{dc_dc});
    add_mlp_grads(g.confidence, mg);
    axpy(1.0, mg.input.span(), dY.row(dc.confidence_row));
  }
  const Mat dC = layer_norm_backward(m.params.out_norm, dc.norm, dY, g.out_norm);
  const MemAttnBackward back = mem_attn_backward(cfg.attn, m.params.attn, attn_cache, dC, g.attn);

  const Mat& dQ = back.queries;
  axpy(1.0, dQ.row(0), g.mask_token.span());
  axpy(1.0, dQ.row(1), g.iou_token.span());
  axpy(1.0, dQ.row(2), g.occ_token.span());
  for (std::size_t i = 0; i < target.prompts.size(); ++i)
    axpy(1.0, dQ.row(kSpecialTokens + i),
         target.prompts[i].positive ? g.prompt_pos.span() : g.prompt_neg.span());
  backprop_patch_embed(patches, dQ.slice_rows(kSpecialTokens + target.prompts.size(), n), g);

  if (back.kv.rows() == kv.rows()) {
    for (std::size_t k = 0; k < ctx.spatial.size(); ++k) {
      const detail::MemEncCache& mc = src_cache[k];
      const Mat dM = back.kv.slice_rows(k * n, n);
      Mat dx1 = dM;
      add_inplace(dx1, mlp_backward_rows(m.params.fuser2, mc.f2, dM, g.fuser2));
      Mat dx0 = dx1;
      add_inplace(dx0, mlp_backward_rows(m.params.fuser1, mc.f1, dx1, g.fuser1));
      accumulate_tn(dx0, src_embed[k], g.mem_align);
      for (std::size_t i = 0; i < n; ++i) axpy(ctx.spatial[k].pooled[i], dx0.row(i), g.mem_lift.span());
      const Mat dE = matmul(dx0, m.params.mem_align);
      backprop_patch_embed(ctx.spatial[k].patches, dE, g);
    }
  }
  return loss;
}

namespace {

/// Training-side mirror of the stream state.
struct ContextState {
  FrameContext ctx;
  EmaPrototype prototype;
};

std::vector<double> pooled_truth(const BinaryMask& mask, int patch) {
  const int gc = mask.width / patch;
  std::vector<double> out(static_cast<std::size_t>((mask.height / patch) * gc), 0.0);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) out[static_cast<std::size_t>((y / patch) * gc + x / patch)] += 1.0;
  for (auto& v : out) v /= static_cast<double>(patch * patch);
  return out;
}

void advance(const ToyModel& m, ContextState& st, const Mat& patches, const DecoderOutput& out,
             PrototypeMode mode, const BinaryMask* truth) {
  const BankConfig& bc = m.config.bank;
  const Confidence c = out.confidence;
  if (mode != PrototypeMode::kNoPrototype &&
      (st.prototype.initialized || c.value() >= bc.tau)) {
    const Confidence used = mode == PrototypeMode::kFixedMomentum ? Confidence(0.0) : c;
    EmaUpdate upd = ema_update(st.prototype, out.pointer, used, m.config.ema);
    st.prototype = std::move(upd.prototype);
  }
  const bool occluded = c.value() < bc.tau;
  Vec ptr = out.pointer;
  if (occluded) axpy(1.0, m.occlusion_embedding.span(), ptr.span());
  st.ctx.spatial.push_back(MemorySource{
      patches, truth ? pooled_truth(*truth, m.config.patch) : pooled_mask(out.mask_logits, m.config.patch), occluded});
  st.ctx.pointers.push_back(std::move(ptr));
  while (st.ctx.spatial.size() > bc.capacity) {
    st.ctx.spatial.erase(st.ctx.spatial.begin());
    st.ctx.pointers.erase(st.ctx.pointers.begin());
  }
  if (mode != PrototypeMode::kNoPrototype && st.prototype.initialized)
    st.ctx.prototype = st.prototype.vector;
  else
    st.ctx.prototype.reset();
}

}  // namespace

SequenceLoss sequence_loss(const ToyModel& m, const SyntheticSequence& seq, PrototypeMode mode,
                           const TrainConfig& tc, ToyParams* grads, const std::function<void()>& flush,
                           bool teacher_forced) {
  if (seq.length() == 0) throw ConfigError("sequence_loss: empty sequence");
  const std::size_t len = seq.length();
  const std::size_t chunk = flush && tc.update_every > 0 ? tc.update_every : len;
  SequenceLoss total;
  ContextState st;
  const double mean_scale = 1.0 / static_cast<double>(len);
  for (std::size_t t = 0; t < len; ++t) {
    const std::size_t chunk_start = t - t % chunk;
    const std::size_t chunk_len = std::min(chunk, len - chunk_start);
    FrameTarget target{seq.masks[t], seq.visibility[t], {}};
    if (t == 0) target.prompts.push_back(centroid_prompt(seq.masks[0]));
    DecoderOutput out;
    const FrameLoss fl = frame_loss(m, st.ctx, seq.frames[t].pixels, target, tc, grads,
                                    1.0 / static_cast<double>(chunk_len), &out);
    total.mean.total += fl.total * mean_scale;
    total.mean.mask += fl.mask * mean_scale;
    total.mean.dice += fl.dice * mean_scale;
    total.mean.confidence += fl.confidence * mean_scale;
    total.mean.iou += fl.iou * mean_scale;
    if (!std::isfinite(fl.total)) return total;
    advance(m, st, extract_patches(seq.frames[t].pixels, m.config.patch), out, mode,
            teacher_forced ? &seq.masks[t] : nullptr);
    if (flush && t + 1 == chunk_start + chunk_len) flush();
  }
  total.frames = len;
  return total;
}

AdamOptimizer::AdamOptimizer(const ToyConfig& cfg, const TrainConfig& tc)
    : tc_(tc), m_(ToyParams::zeros(cfg)), v_(ToyParams::zeros(cfg)) {}

AdamOptimizer::AdamOptimizer(const TrainConfig& tc, AdamState state)
    : tc_(tc), m_(std::move(state.m)), v_(std::move(state.v)), t_(state.t) {
  if (t_ < 0) throw ConfigError("adam: negative step count");
}

double AdamOptimizer::step(ToyParams& params, ToyParams& grads) {
  std::vector<std::span<double>> p, g, m, v;
  for_each_tensor(params, [&](const std::string&, std::span<double> s) { p.push_back(s); });
  for_each_tensor(grads, [&](const std::string&, std::span<double> s) { g.push_back(s); });
  for_each_tensor(m_, [&](const std::string&, std::span<double> s) { m.push_back(s); });
  for_each_tensor(v_, [&](const std::string&, std::span<double> s) { v.push_back(s); });
  double sq = 0.0;
  for (const auto& s : g)
    for (double x : s) sq += x * x;
  const double gnorm = std::sqrt(sq);
  if (!std::isfinite(gnorm)) throw NumericError("adam: non-finite gradient norm");
  const double clip = tc_.grad_clip > 0.0 && gnorm > tc_.grad_clip ? tc_.grad_clip / gnorm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(tc_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(tc_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < p.size(); ++k)
    for (std::size_t i = 0; i < p[k].size(); ++i) {
      const double gi = g[k][i] * clip;
      g[k][i] = gi;
      m[k][i] = tc_.beta1 * m[k][i] + (1.0 - tc_.beta1) * gi;
      v[k][i] = tc_.beta2 * v[k][i] + (1.0 - tc_.beta2) * gi * gi;
      p[k][i] -= tc_.learning_rate * (m[k][i] / bc1) / (std::sqrt(v[k][i] / bc2) + tc_.adam_epsilon);
    }
  ++params.confidence.revision;
  ++params.fuser1.revision;
  ++params.fuser2.revision;
  for (auto& l : params.attn.layers) ++l.mlp.revision;
  return gnorm;
}

TrainReport train_toy(ToyModel& model, const TrainConfig& tc, const ProgressFn& progress,
                      const TrainState* resume, const EpochHook& on_epoch) {
  tc.validate();
  model.config.validate();
  if (tc.data.height != model.config.height || tc.data.width != model.config.width)
    throw ConfigError("train: data frame size does not match the model");
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<SyntheticSequence> data;
  data.reserve(tc.sequences);
  for (std::size_t i = 0; i < tc.sequences; ++i)
    data.push_back(generate(sample_scene(tc.data, static_cast<int>(i))));

  std::optional<AdamOptimizer> adam_opt;
  TrainReport report;
  std::size_t first_epoch = 0;
  if (resume) {
    if (resume->epochs_done > tc.epochs || resume->epoch_loss.size() != resume->epochs_done)
      throw ConfigError("train: resume state is inconsistent with the configured epochs");
    adam_opt.emplace(tc, resume->adam);
    report.epoch_loss = resume->epoch_loss;
    first_epoch = resume->epochs_done;
  } else {
    adam_opt.emplace(model.config, tc);
  }
  AdamOptimizer& adam = *adam_opt;
  const CounterRng root(tc.seed);
  for (std::size_t epoch = first_epoch; epoch < tc.epochs; ++epoch) {
    CounterRng rng = root.fork(epoch + 1);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform() * static_cast<double>(i))]);

    double epoch_loss = 0.0;
    for (std::size_t idx : order) {
      const double u = rng.uniform();
      const PrototypeMode mode = u < tc.no_prototype_fraction ? PrototypeMode::kNoPrototype
                                 : u < tc.no_prototype_fraction + tc.fixed_momentum_fraction
                                     ? PrototypeMode::kFixedMomentum
                                     : PrototypeMode::kFull;
      const bool forced = rng.uniform() < tc.teacher_forcing;
      ToyParams grads = ToyParams::zeros(model.config);
      const SequenceLoss sl = sequence_loss(model, data[idx], mode, tc, &grads, [&] {
        adam.step(model.params, grads);
        grads = ToyParams::zeros(model.config);
      }, forced);
      if (!std::isfinite(sl.mean.total)) {
        std::ostringstream msg;
        msg << "train: non-finite loss at seed " << tc.seed << ", epoch " << epoch + 1
            << ", sequence " << idx << " (data seed " << tc.data.seed << ")";
        throw NumericError(msg.str());
      }
      epoch_loss += sl.mean.total / static_cast<double>(data.size());
    }
    report.epoch_loss.push_back(epoch_loss);
    if (progress) {
      std::ostringstream msg;
      msg << "epoch " << epoch + 1 << "/" << tc.epochs << " loss " << epoch_loss;
      progress(msg.str());
    }
    if (on_epoch && !on_epoch(model, TrainState{epoch + 1, report.epoch_loss, adam.state()})) break;
  }
  report.optimizer_steps = static_cast<std::size_t>(adam.steps());
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace emasam
