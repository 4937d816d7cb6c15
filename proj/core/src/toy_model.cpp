#include "emasam/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "toy_internal.hpp"

namespace emasam {

std::string to_string(PrototypeMode m) {
  switch (m) {
    case PrototypeMode::kNoPrototype: return "no_prototype";
    case PrototypeMode::kFixedMomentum: return "fixed_momentum";
    case PrototypeMode::kFull: return "full";
  }
  return "?";
}

PrototypeMode prototype_mode_from_string(const std::string& s) {
  if (s == "no_prototype") return PrototypeMode::kNoPrototype;
  if (s == "fixed_momentum") return PrototypeMode::kFixedMomentum;
  if (s == "full") return PrototypeMode::kFull;
  throw ConfigError("unknown mode '" + s + "' (expected no_prototype, fixed_momentum or full)");
}

std::string to_string(ConfidenceSource s) {
  return s == ConfidenceSource::kOcclusionToken ? "occlusion_token" : "mask_token";
}

ConfidenceSource confidence_source_from_string(const std::string& s) {
  if (s == "occlusion_token") return ConfidenceSource::kOcclusionToken;
  if (s == "mask_token") return ConfidenceSource::kMaskToken;
  throw ConfigError("unknown confidence source '" + s + "'");
}

void ToyConfig::validate() const {
  if (patch <= 0) throw ConfigError("model.patch must be positive");
  if (height <= 0 || width <= 0) throw ConfigError("model frame size must be positive");
  if (height % patch != 0 || width % patch != 0)
    throw ConfigError("model: frame size " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not a multiple of patch " + std::to_string(patch));
  attn.validate();
  bank.validate();
  ema.validate();
  if (confidence_hidden == 0 || fuser_hidden == 0) throw ConfigError("model hidden sizes must be positive");
}

namespace {

Vec normal_vec(std::size_t d, CounterRng rng, double scale) {
  Vec v(d);
  for (auto& x : v.span()) x = scale * rng.normal();
  return v;
}

}  // namespace

ToyParams ToyParams::seeded(const ToyConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t d = cfg.dim();
  const std::size_t pp = cfg.patch_pixels();
  const CounterRng root(seed);
  ToyParams p;
  CounterRng r1 = root.fork(1);
  p.patch_w = init_uniform(d, pp, r1);
  p.patch_b = init_uniform_vec(d, pp, r1);
  p.prompt_pos = normal_vec(d, root.fork(2), 0.5);
  p.prompt_neg = normal_vec(d, root.fork(3), 0.5);
  p.mask_token = normal_vec(d, root.fork(4), 0.5);
  p.iou_token = normal_vec(d, root.fork(5), 0.5);
  p.occ_token = normal_vec(d, root.fork(6), 0.5);
  CounterRng r7 = root.fork(7);
  p.attn = MemAttnWeights::seeded(cfg.attn, r7);
  // small output gain keeps the initial mask logits within a few units
  p.out_norm = LayerNormParams::identity(d);
  for (auto& g : p.out_norm.gain.span()) g = 0.3;
  CounterRng r8 = root.fork(8);
  p.iou_w = init_uniform_vec(d, d, r8);
  p.iou_b = Vec(1);
  p.confidence = Mlp::seeded(d, cfg.confidence_hidden, 1, OutputActivation::kSigmoid, r8);
  CounterRng r9 = root.fork(9);
  p.mem_align = init_uniform(d, d, r9);
  p.mem_lift = init_uniform_vec(d, 1, r9);
  p.fuser1 = Mlp::seeded(d, cfg.fuser_hidden, d, OutputActivation::kIdentity, r9);
  p.fuser2 = Mlp::seeded(d, cfg.fuser_hidden, d, OutputActivation::kIdentity, r9);
  return p;
}

ToyParams ToyParams::zeros(const ToyConfig& cfg) {
  ToyParams p = seeded(cfg, 0);
  for_each_tensor(p, [](const std::string&, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
  return p;
}

std::size_t parameter_count(const ToyParams& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&](const std::string&, std::span<const double> s) { n += s.size(); });
  return n;
}

ToyModel ToyModel::create(const ToyConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return ToyModel{cfg, ToyParams::seeded(cfg, seed),
                  default_occlusion_embedding(cfg.dim(), cfg.occlusion_seed)};
}

bool ToyModel::operator==(const ToyModel& o) const {
  std::vector<std::span<const double>> a, b;
  for_each_tensor(params, [&](const std::string&, std::span<const double> s) { a.push_back(s); });
  for_each_tensor(o.params, [&](const std::string&, std::span<const double> s) { b.push_back(s); });
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::equal(a[i].begin(), a[i].end(), b[i].begin(), b[i].end())) return false;
  return occlusion_embedding == o.occlusion_embedding && config.height == o.config.height &&
         config.width == o.config.width && config.patch == o.config.patch &&
         config.bank.capacity == o.config.bank.capacity && config.bank.gain == o.config.bank.gain &&
         config.bank.tau == o.config.bank.tau && config.ema.alpha0 == o.config.ema.alpha0 &&
         config.attn.norm == o.config.attn.norm && config.confidence_source == o.config.confidence_source;
}

std::vector<GridPos> FrameEmbedding::positions() const {
  std::vector<GridPos> out;
  out.reserve(static_cast<std::size_t>(grid_rows * grid_cols));
  for (int r = 0; r < grid_rows; ++r)
    for (int c = 0; c < grid_cols; ++c) out.push_back({r, c});
  return out;
}

Mat extract_patches(const Image& pixels, int patch) {
  if (patch <= 0 || pixels.height % patch != 0 || pixels.width % patch != 0)
    throw ShapeError("extract_patches: frame " + std::to_string(pixels.height) + "x" +
                     std::to_string(pixels.width) + " does not tile by " + std::to_string(patch));
  const int gr = pixels.height / patch, gc = pixels.width / patch;
  Mat out(static_cast<std::size_t>(gr * gc), static_cast<std::size_t>(patch * patch));
  for (int r = 0; r < gr; ++r)
    for (int c = 0; c < gc; ++c) {
      auto row = out.row(static_cast<std::size_t>(r * gc + c));
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          row[static_cast<std::size_t>(y * patch + x)] = pixels.at(r * patch + y, c * patch + x);
    }
  return out;
}

namespace detail {

Mat embed_patches(const ToyModel& m, const Mat& patches) {
  Mat e = matmul_nt(patches, m.params.patch_w);
  add_row_bias(e, m.params.patch_b.span());
  return e;
}

Interp1d interp_weights(int out_len, int in_len) {
  Interp1d w;
  const double scale = static_cast<double>(in_len) / static_cast<double>(out_len);
  for (int o = 0; o < out_len; ++o) {
    const double src = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(in_len - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in_len - 1);
    const double f = src - i0;
    w.i0.push_back(i0);
    w.i1.push_back(i1);
    w.w0.push_back(1.0 - f);
    w.w1.push_back(f);
  }
  return w;
}

DecoderOutput decode_forward(const ToyModel& m, const Mat& conditioned, const FrameEmbedding& e,
                             DecodeCache* cache) {
  const ToyConfig& cfg = m.config;
  const std::size_t n = static_cast<std::size_t>(e.grid_rows * e.grid_cols);
  if (conditioned.cols() != cfg.dim() || conditioned.rows() < kSpecialTokens + n)
    throw ShapeError("decode: conditioned query set has the wrong shape");
  DecodeCache local;
  DecodeCache& c = cache ? *cache : local;
  c.normed = layer_norm_forward(conditioned, m.params.out_norm, c.norm);
  c.patch_row0 = conditioned.rows() - n;
  const auto mask_tok = c.normed.row(0);

  c.grid_logits = Mat(static_cast<std::size_t>(e.grid_rows), static_cast<std::size_t>(e.grid_cols));
  for (std::size_t i = 0; i < n; ++i) c.grid_logits.span()[i] = dot(mask_tok, c.normed.row(c.patch_row0 + i));

  DecoderOutput out;
  out.mask_logits = upsample_bilinear(c.grid_logits, cfg.height, cfg.width);
  out.mask = BinaryMask(cfg.height, cfg.width);
  for (std::size_t i = 0; i < out.mask.size(); ++i) out.mask.data[i] = out.mask_logits.data[i] > 0.0;

  c.iou_pre = dot(m.params.iou_w.span(), c.normed.row(1)) + m.params.iou_b[0];
  out.iou_estimate = sigmoid(c.iou_pre);

  c.confidence_row = cfg.confidence_source == ConfidenceSource::kOcclusionToken ? 2 : 0;
  MlpResult conf = mlp_forward(m.params.confidence, c.normed.row_vec(c.confidence_row));
  out.confidence = Confidence(conf.output[0]);
  c.confidence = std::move(conf.cache);

  Vec p = c.normed.row_vec(0);
  c.pointer_norm = norm(p.span());
  if (!(c.pointer_norm > 0.0) || !std::isfinite(c.pointer_norm))
    throw NumericError("decode: degenerate mask token");
  out.pointer = scaled(p, 1.0 / c.pointer_norm);
  return out;
}

Mat memory_tokens_forward(const ToyModel& m, const Mat& embedding, const std::vector<double>& pooled,
                          MemEncCache* cache) {
  if (pooled.size() != embedding.rows()) throw ShapeError("memory encoder: pooled mask size mismatch");
  MemEncCache local;
  MemEncCache& c = cache ? *cache : local;
  c.x0 = matmul_nt(embedding, m.params.mem_align);
  for (std::size_t i = 0; i < pooled.size(); ++i) axpy(pooled[i], m.params.mem_lift.span(), c.x0.row(i));
  c.x1 = c.x0;
  add_inplace(c.x1, mlp_forward_rows(m.params.fuser1, c.x0, c.f1));
  Mat x2 = c.x1;
  add_inplace(x2, mlp_forward_rows(m.params.fuser2, c.x1, c.f2));
  return x2;
}

}  // namespace detail

FrameEmbedding encode_frame(const ToyModel& m, const Image& pixels) {
  if (pixels.height != m.config.height || pixels.width != m.config.width)
    throw ShapeError("encode_frame: frame is " + std::to_string(pixels.height) + "x" +
                     std::to_string(pixels.width) + ", model expects " +
                     std::to_string(m.config.height) + "x" + std::to_string(m.config.width));
  FrameEmbedding e;
  e.patch = m.config.patch;
  e.grid_rows = m.config.grid_rows();
  e.grid_cols = m.config.grid_cols();
  e.tokens = detail::embed_patches(m, extract_patches(pixels, m.config.patch));
  return e;
}

Vec encode_prompt(const ToyModel& m, const PointPrompt& p) {
  if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw ConfigError("prompt: non-finite coordinates");
  const double patch = m.config.patch;
  Vec code = sincos_code(p.y / patch, p.x / patch, m.config.dim());
  return add(code, p.positive ? m.params.prompt_pos : m.params.prompt_neg);
}

QuerySet build_queries(const ToyModel& m, const FrameEmbedding& e,
                       const std::vector<PointPrompt>& prompts) {
  const std::size_t d = m.config.dim();
  const std::size_t n = e.tokens.rows();
  QuerySet q;
  q.tokens = Mat(kSpecialTokens + prompts.size() + n, d);
  q.tokens.set_row(0, m.params.mask_token.span());
  q.tokens.set_row(1, m.params.iou_token.span());
  q.tokens.set_row(2, m.params.occ_token.span());
  q.positions.assign(kSpecialTokens + prompts.size(), std::nullopt);
  for (std::size_t i = 0; i < prompts.size(); ++i)
    q.tokens.set_row(kSpecialTokens + i, encode_prompt(m, prompts[i]).span());
  const auto pos = e.positions();
  for (std::size_t i = 0; i < n; ++i) {
    q.tokens.set_row(kSpecialTokens + prompts.size() + i, e.tokens.row(i));
    q.positions.emplace_back(pos[i]);
  }
  return q;
}

DecoderOutput decode(const ToyModel& m, const Mat& conditioned, const FrameEmbedding& e) {
  return detail::decode_forward(m, conditioned, e, nullptr);
}

Image upsample_bilinear(const Mat& grid, int height, int width) {
  if (grid.rows() == 0 || grid.cols() == 0) throw ShapeError("upsample: empty grid");
  const auto ry = detail::interp_weights(height, static_cast<int>(grid.rows()));
  const auto rx = detail::interp_weights(width, static_cast<int>(grid.cols()));
  Image out(height, width);
  for (int y = 0; y < height; ++y) {
    const auto a = static_cast<std::size_t>(ry.i0[y]), b = static_cast<std::size_t>(ry.i1[y]);
    for (int x = 0; x < width; ++x) {
      const auto c0 = static_cast<std::size_t>(rx.i0[x]), c1 = static_cast<std::size_t>(rx.i1[x]);
      const double top = rx.w0[x] * grid(a, c0) + rx.w1[x] * grid(a, c1);
      const double bot = rx.w0[x] * grid(b, c0) + rx.w1[x] * grid(b, c1);
      out.at(y, x) = ry.w0[y] * top + ry.w1[y] * bot;
    }
  }
  return out;
}

Mat upsample_bilinear_adjoint(const Image& g, int grid_rows, int grid_cols) {
  const auto ry = detail::interp_weights(g.height, grid_rows);
  const auto rx = detail::interp_weights(g.width, grid_cols);
  Mat out(static_cast<std::size_t>(grid_rows), static_cast<std::size_t>(grid_cols));
  for (int y = 0; y < g.height; ++y) {
    const auto a = static_cast<std::size_t>(ry.i0[y]), b = static_cast<std::size_t>(ry.i1[y]);
    for (int x = 0; x < g.width; ++x) {
      const auto c0 = static_cast<std::size_t>(rx.i0[x]), c1 = static_cast<std::size_t>(rx.i1[x]);
      const double v = g.at(y, x);
      out(a, c0) += ry.w0[y] * rx.w0[x] * v;
      out(a, c1) += ry.w0[y] * rx.w1[x] * v;
      out(b, c0) += ry.w1[y] * rx.w0[x] * v;
      out(b, c1) += ry.w1[y] * rx.w1[x] * v;
    }
  }
  return out;
}

std::vector<double> pooled_mask(const Image& logits, int patch) {
  if (patch <= 0 || logits.height % patch != 0 || logits.width % patch != 0)
    throw ShapeError("pooled_mask: logits do not tile by the patch size");
  const int gr = logits.height / patch, gc = logits.width / patch;
  std::vector<double> out(static_cast<std::size_t>(gr * gc), 0.0);
  for (int y = 0; y < logits.height; ++y)
    for (int x = 0; x < logits.width; ++x)
      out[static_cast<std::size_t>((y / patch) * gc + x / patch)] += sigmoid(logits.at(y, x));
  for (auto& v : out) v /= static_cast<double>(patch * patch);
  return out;
}

Mat memory_tokens(const ToyModel& m, const Mat& embedding, const std::vector<double>& pooled) {
  return detail::memory_tokens_forward(m, embedding, pooled, nullptr);
}

SpatialMemory encode_memory(const ToyModel& m, const FrameEmbedding& e, const Image& mask_logits) {
  SpatialMemory s;
  s.grid_rows = e.grid_rows;
  s.grid_cols = e.grid_cols;
  s.positions = e.positions();
  s.tokens = memory_tokens(m, e.tokens, pooled_mask(mask_logits, e.patch));
  return s;
}

StreamState initial_state(const ToyModel& m) {
  return StreamState{MemoryBank(m.config.dim(), m.config.bank, m.occlusion_embedding), 0, std::nullopt};
}

StreamState advance_state(const ToyModel& m, const StreamState& state, const FrameEmbedding& e,
                          const DecoderOutput& out, std::int64_t frame_index, PrototypeMode mode,
                          StepLog& log) {
  StreamState next = state;
  const Confidence c = out.confidence;
  log.frame = frame_index;
  log.confidence = c.value();
  if (mode != PrototypeMode::kNoPrototype) {
    const EmaPrototype& proto = next.bank.prototype();
    const Confidence used = mode == PrototypeMode::kFixedMomentum ? Confidence(0.0) : c;
    log.confidence_used = used.value();
    // bootstrap only from a frame the decoder trusts
    if (proto.initialized || c.value() >= m.config.bank.tau) {
      EmaUpdate upd = ema_update(proto, out.pointer, used, m.config.ema);
      log.degenerate = upd.degenerate;
      log.prototype_updated = !upd.degenerate;
      if (!upd.degenerate) log.alpha = upd.prototype.last_alpha;
      next.bank.set_prototype(std::move(upd.prototype));
    }
    if (next.bank.prototype().initialized)
      log.prototype_angle = prototype_angle_to(next.bank.prototype(), out.pointer);
  }
  log.tagged_occluded = c.value() < m.config.bank.tau;
  next.bank.push_frame(encode_memory(m, e, out.mask_logits), PointerEntry{out.pointer, frame_index, false}, c);
  ++next.frames_seen;
  return next;
}

StepResult step(const ToyModel& m, const StreamState& state, const Frame& frame,
                const std::vector<PointPrompt>& prompts, PrototypeMode mode) {
  if (state.frames_seen == 0 && prompts.empty())
    throw ConfigError("step: frame " + std::to_string(frame.index) +
                      " is the first frame of the stream and needs a prompt");
  const FrameEmbedding e = encode_frame(m, frame.pixels);
  const QuerySet q = build_queries(m, e, prompts);
  const KvSet kv = state.bank.assemble_kv(mode != PrototypeMode::kNoPrototype);
  const QuerySet cond = mem_attn_stack(q, kv, m.config.attn, m.params.attn);
  StepResult r;
  r.output = decode(m, cond.tokens, e);
  r.state = advance_state(m, state, e, r.output, frame.index, mode, r.log);
  return r;
}

}  // namespace emasam
