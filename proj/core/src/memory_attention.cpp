#include "emasam/memory_attention.hpp"

#include <cmath>
#include <string>

namespace emasam {

namespace {

using Positions = std::vector<std::optional<GridPos>>;

void rotate_rows(Mat& m, const Positions& pos, const RopeParams& rope, bool inverse) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    if (pos[i]) rope_rotate(m.row(i), *pos[i], rope, inverse);
}

Mat attn_block_forward(const Mat& q_in, const Mat& kv_in, const Positions& q_pos,
                       const Positions& k_pos, const AttnProjections& w, const RopeParams& rope,
                       AttnBlockCache& c) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q_in.cols()));
  c.input = q_in;
  c.q = matmul_nt(q_in, w.wq);
  rotate_rows(c.q, q_pos, rope, false);
  c.k = matmul_nt(kv_in, w.wk);
  rotate_rows(c.k, k_pos, rope, false);
  c.v = matmul_nt(kv_in, w.wv);
  c.attended = attention_forward(c.q, c.k, c.v, scale, c.attn);
  return matmul_nt(c.attended, w.wo);
}

struct BlockGrad {
  Mat d_query_input;
  Mat d_kv_input;
};

BlockGrad attn_block_backward(const AttnProjections& w, const AttnBlockCache& c, const Mat& kv_in,
                              const Positions& q_pos, const Positions& k_pos,
                              const RopeParams& rope, const Mat& upstream, AttnProjections& g) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.input.cols()));
  accumulate_tn(upstream, c.attended, g.wo);
  Mat d_att = matmul(upstream, w.wo);
  AttentionGrads ag = attention_backward(c.q, c.k, c.v, scale, c.attn, d_att);
  rotate_rows(ag.queries, q_pos, rope, true);
  rotate_rows(ag.keys, k_pos, rope, true);
  accumulate_tn(ag.queries, c.input, g.wq);
  accumulate_tn(ag.keys, kv_in, g.wk);
  accumulate_tn(ag.values, kv_in, g.wv);
  BlockGrad out;
  out.d_query_input = matmul(ag.queries, w.wq);
  out.d_kv_input = matmul(ag.keys, w.wk);
  add_inplace(out.d_kv_input, matmul(ag.values, w.wv));
  return out;
}

std::vector<double> make_dropout_mask(std::size_t n, double p, CounterRng* rng) {
  if (rng == nullptr || p <= 0.0) return {};
  std::vector<double> mask(n);
  const double keep = 1.0 / (1.0 - p);
  for (double& m : mask) m = rng->uniform() < p ? 0.0 : keep;
  return mask;
}

void apply_mask(Mat& m, const std::vector<double>& mask) {
  if (mask.empty()) return;
  auto s = m.span();
  for (std::size_t i = 0; i < s.size(); ++i) s[i] *= mask[i];
}

Mat masked(const Mat& m, const std::vector<double>& mask) {
  Mat out = m;
  apply_mask(out, mask);
  return out;
}

Mat sum(const Mat& a, const Mat& b) {
  Mat out = a;
  add_inplace(out, b);
  return out;
}

void check_layer_dims(const MemAttnConfig& cfg, const MemAttnLayerWeights& w) {
  const std::size_t d = cfg.dim;
  auto sq = [d](const Mat& m) { return m.rows() == d && m.cols() == d; };
  const bool ok = sq(w.self_attn.wq) && sq(w.self_attn.wk) && sq(w.self_attn.wv) &&
                  sq(w.self_attn.wo) && sq(w.cross_attn.wq) && sq(w.cross_attn.wk) &&
                  sq(w.cross_attn.wv) && sq(w.cross_attn.wo) && w.mlp.in_dim() == d &&
                  w.mlp.out_dim() == d && w.norm_self.gain.dim() == d &&
                  w.norm_cross.gain.dim() == d && w.norm_mlp.gain.dim() == d;
  if (!ok) throw ShapeError("memory attention: layer weights do not match cfg.dim");
}

Mat layer_forward(const Mat& x0, const Positions& q_pos, const Mat& kv_tokens,
                  const Positions& kv_pos, const MemAttnConfig& cfg, const MemAttnLayerWeights& w,
                  MemAttnLayerCache& c, CounterRng* dropout_rng) {
  check_layer_dims(cfg, w);
  const RopeParams rope = cfg.rope();
  const std::size_t n = x0.size();
  c.x_in = x0;
  c.drop_self = make_dropout_mask(n, cfg.dropout, dropout_rng);
  c.drop_cross = make_dropout_mask(n, cfg.dropout, dropout_rng);
  c.drop_mlp = make_dropout_mask(n, cfg.dropout, dropout_rng);
  c.cross_skipped = kv_tokens.rows() == 0;

  if (cfg.norm == NormPlacement::kPre) {
    Mat a = layer_norm_forward(x0, w.norm_self, c.ln_self);
    Mat sa = attn_block_forward(a, a, q_pos, q_pos, w.self_attn, rope, c.self_block);
    apply_mask(sa, c.drop_self);
    c.mid1 = sum(x0, sa);
    if (!c.cross_skipped) {
      Mat b = layer_norm_forward(c.mid1, w.norm_cross, c.ln_cross);
      Mat ca = attn_block_forward(b, kv_tokens, q_pos, kv_pos, w.cross_attn, rope, c.cross_block);
      apply_mask(ca, c.drop_cross);
      c.mid2 = sum(c.mid1, ca);
    } else {
      c.mid2 = c.mid1;
    }
    Mat h = layer_norm_forward(c.mid2, w.norm_mlp, c.ln_mlp);
    Mat m = mlp_forward_rows(w.mlp, h, c.mlp);
    apply_mask(m, c.drop_mlp);
    return sum(c.mid2, m);
  }

  Mat sa = attn_block_forward(x0, x0, q_pos, q_pos, w.self_attn, rope, c.self_block);
  apply_mask(sa, c.drop_self);
  c.mid1 = layer_norm_forward(sum(x0, sa), w.norm_self, c.ln_self);
  if (!c.cross_skipped) {
    Mat ca =
        attn_block_forward(c.mid1, kv_tokens, q_pos, kv_pos, w.cross_attn, rope, c.cross_block);
    apply_mask(ca, c.drop_cross);
    c.mid2 = layer_norm_forward(sum(c.mid1, ca), w.norm_cross, c.ln_cross);
  } else {
    c.mid2 = c.mid1;
  }
  Mat m = mlp_forward_rows(w.mlp, c.mid2, c.mlp);
  apply_mask(m, c.drop_mlp);
  return layer_norm_forward(sum(c.mid2, m), w.norm_mlp, c.ln_mlp);
}

Mat layer_backward(const MemAttnConfig& cfg, const MemAttnLayerWeights& w,
                   const MemAttnLayerCache& c, const Positions& q_pos, const Mat& kv_tokens,
                   const Positions& kv_pos, const Mat& upstream, MemAttnLayerWeights& g,
                   Mat& d_kv) {
  const RopeParams rope = cfg.rope();
  if (cfg.norm == NormPlacement::kPre) {
    Mat d_mid2 = upstream;
    {
      Mat d_h = mlp_backward_rows(w.mlp, c.mlp, masked(upstream, c.drop_mlp), g.mlp);
      add_inplace(d_mid2, layer_norm_backward(w.norm_mlp, c.ln_mlp, d_h, g.norm_mlp));
    }
    Mat d_mid1 = d_mid2;
    if (!c.cross_skipped) {
      BlockGrad bg = attn_block_backward(w.cross_attn, c.cross_block, kv_tokens, q_pos, kv_pos,
                                         rope, masked(d_mid2, c.drop_cross), g.cross_attn);
      add_inplace(d_mid1, layer_norm_backward(w.norm_cross, c.ln_cross, bg.d_query_input,
                                              g.norm_cross));
      add_inplace(d_kv, bg.d_kv_input);
    }
    Mat d_x0 = d_mid1;
    const Mat& a = c.self_block.input;
    BlockGrad bg = attn_block_backward(w.self_attn, c.self_block, a, q_pos, q_pos, rope,
                                       masked(d_mid1, c.drop_self), g.self_attn);
    Mat d_a = sum(bg.d_query_input, bg.d_kv_input);
    add_inplace(d_x0, layer_norm_backward(w.norm_self, c.ln_self, d_a, g.norm_self));
    return d_x0;
  }

  Mat d_s3 = layer_norm_backward(w.norm_mlp, c.ln_mlp, upstream, g.norm_mlp);
  Mat d_mid2 = d_s3;
  add_inplace(d_mid2, mlp_backward_rows(w.mlp, c.mlp, masked(d_s3, c.drop_mlp), g.mlp));
  Mat d_mid1 = d_mid2;
  if (!c.cross_skipped) {
    Mat d_s2 = layer_norm_backward(w.norm_cross, c.ln_cross, d_mid2, g.norm_cross);
    BlockGrad bg = attn_block_backward(w.cross_attn, c.cross_block, kv_tokens, q_pos, kv_pos, rope,
                                       masked(d_s2, c.drop_cross), g.cross_attn);
    d_mid1 = sum(d_s2, bg.d_query_input);
    add_inplace(d_kv, bg.d_kv_input);
  }
  Mat d_s1 = layer_norm_backward(w.norm_self, c.ln_self, d_mid1, g.norm_self);
  BlockGrad bg = attn_block_backward(w.self_attn, c.self_block, c.x_in, q_pos, q_pos, rope,
                                     masked(d_s1, c.drop_self), g.self_attn);
  Mat d_x0 = d_s1;
  add_inplace(d_x0, bg.d_query_input);
  add_inplace(d_x0, bg.d_kv_input);
  return d_x0;
}

AttnProjections seeded_projections(std::size_t d, CounterRng& rng) {
  AttnProjections p;
  p.wq = init_uniform(d, d, rng);
  p.wk = init_uniform(d, d, rng);
  p.wv = init_uniform(d, d, rng);
  p.wo = init_uniform(d, d, rng);
  return p;
}

AttnProjections zero_projections(std::size_t d) {
  return AttnProjections{Mat(d, d), Mat(d, d), Mat(d, d), Mat(d, d)};
}

void check_kv(const KvSet& kv, std::size_t d) {
  if (kv.rows() > 0 && kv.tokens.cols() != d)
    throw ShapeError("memory attention: kv width " + std::to_string(kv.tokens.cols()) +
                     " != dim " + std::to_string(d));
  if (kv.positions.size() != kv.rows())
    throw ShapeError("memory attention: kv position list length mismatch");
}

}  // namespace

void MemAttnConfig::validate() const {
  if (layers == 0) throw ConfigError("mem_attn.layers must be >= 1");
  if (dim == 0 || dim % 4 != 0) throw ConfigError("mem_attn.dim must be a positive multiple of 4");
  if (mlp_hidden == 0) throw ConfigError("mem_attn.mlp_hidden must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("mem_attn.dropout must lie in [0, 1)");
  if (!(pos_scale >= 0.0)) throw ConfigError("mem_attn.pos_scale must be non-negative");
  rope().validate();
}

void QuerySet::validate() const {
  if (positions.size() != tokens.rows())
    throw ShapeError("query set: position list length != token count");
}

MemAttnWeights MemAttnWeights::seeded(const MemAttnConfig& cfg, CounterRng& rng) {
  cfg.validate();
  MemAttnWeights w;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    MemAttnLayerWeights lw;
    lw.norm_self = LayerNormParams::identity(cfg.dim);
    lw.self_attn = seeded_projections(cfg.dim, rng);
    lw.norm_cross = LayerNormParams::identity(cfg.dim);
    lw.cross_attn = seeded_projections(cfg.dim, rng);
    lw.norm_mlp = LayerNormParams::identity(cfg.dim);
    lw.mlp = Mlp::seeded(cfg.dim, cfg.mlp_hidden, cfg.dim, OutputActivation::kIdentity, rng);
    w.layers.push_back(std::move(lw));
  }
  return w;
}

MemAttnWeights MemAttnWeights::zeros(const MemAttnConfig& cfg) {
  cfg.validate();
  MemAttnWeights w;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    MemAttnLayerWeights lw;
    lw.norm_self = LayerNormParams::identity(cfg.dim);
    lw.self_attn = zero_projections(cfg.dim);
    lw.norm_cross = LayerNormParams::identity(cfg.dim);
    lw.cross_attn = zero_projections(cfg.dim);
    lw.norm_mlp = LayerNormParams::identity(cfg.dim);
    lw.mlp = Mlp::zeros(cfg.dim, cfg.mlp_hidden, cfg.dim, OutputActivation::kIdentity);
    w.layers.push_back(std::move(lw));
  }
  return w;
}

QuerySet mem_attn_layer(const QuerySet& q, const KvSet& kv, const MemAttnConfig& cfg,
                        const MemAttnLayerWeights& w) {
  cfg.validate();
  q.validate();
  if (q.tokens.cols() != cfg.dim) throw ShapeError("mem_attn_layer: query width != cfg.dim");
  check_kv(kv, cfg.dim);
  MemAttnLayerCache c;
  Mat out = layer_forward(q.tokens, q.positions, kv.tokens, kv.positions, cfg, w, c, nullptr);
  return QuerySet{std::move(out), q.positions};
}

QuerySet mem_attn_stack_forward(const QuerySet& q, const KvSet& kv, const MemAttnConfig& cfg,
                                const MemAttnWeights& w, MemAttnCache& cache,
                                CounterRng* dropout_rng) {
  cfg.validate();
  q.validate();
  if (q.tokens.cols() != cfg.dim) throw ShapeError("mem_attn_stack: query width != cfg.dim");
  if (w.layers.size() != cfg.layers)
    throw ShapeError("mem_attn_stack: expected " + std::to_string(cfg.layers) +
                     " layers of weights, got " + std::to_string(w.layers.size()));
  check_kv(kv, cfg.dim);

  Mat x = q.tokens;
  if (cfg.pos_scale != 0.0) {
    for (std::size_t i = 0; i < x.rows(); ++i) {
      if (!q.positions[i]) continue;
      const Vec code = sincos_code(q.positions[i]->row, q.positions[i]->col, cfg.dim);
      axpy(cfg.pos_scale, code.span(), x.row(i));
    }
  }
  cache.layers.assign(cfg.layers, MemAttnLayerCache{});
  cache.query_positions = q.positions;
  cache.kv_tokens = kv.tokens;
  cache.kv_positions = kv.positions;
  for (std::size_t l = 0; l < cfg.layers; ++l)
    x = layer_forward(x, q.positions, kv.tokens, kv.positions, cfg, w.layers[l], cache.layers[l],
                      dropout_rng);
  return QuerySet{std::move(x), q.positions};
}

QuerySet mem_attn_stack(const QuerySet& q, const KvSet& kv, const MemAttnConfig& cfg,
                        const MemAttnWeights& w) {
  MemAttnCache cache;
  return mem_attn_stack_forward(q, kv, cfg, w, cache, nullptr);
}

MemAttnBackward mem_attn_backward(const MemAttnConfig& cfg, const MemAttnWeights& w,
                                  const MemAttnCache& cache, const Mat& upstream,
                                  MemAttnWeights& grads) {
  if (cache.layers.size() != w.layers.size() || grads.layers.size() != w.layers.size())
    throw ShapeError("mem_attn_backward: cache/weights/grads layer count mismatch");
  MemAttnBackward out;
  out.kv = Mat(cache.kv_tokens.rows(), cfg.dim);
  Mat d = upstream;
  for (std::size_t l = w.layers.size(); l-- > 0;)
    d = layer_backward(cfg, w.layers[l], cache.layers[l], cache.query_positions, cache.kv_tokens,
                       cache.kv_positions, d, grads.layers[l], out.kv);
  out.queries = std::move(d);
  return out;
}

}  // namespace emasam
