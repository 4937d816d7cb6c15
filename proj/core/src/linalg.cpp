#include "emasam/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace emasam {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace

bool Vec::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows_ * cols_, "Mat: data length does not match rows*cols");
}

Vec Mat::row_vec(std::size_t r) const {
  auto s = row(r);
  return Vec(std::vector<double>(s.begin(), s.end()));
}

void Mat::set_row(std::size_t r, std::span<const double> values) {
  require(values.size() == cols_, "Mat::set_row: width mismatch");
  std::copy(values.begin(), values.end(), row(r).begin());
}

bool Mat::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Mat Mat::slice_rows(std::size_t first, std::size_t count) const {
  require(first + count <= rows_, "Mat::slice_rows: out of range");
  Mat out(count, cols_);
  std::copy(data_.begin() + static_cast<std::ptrdiff_t>(first * cols_),
            data_.begin() + static_cast<std::ptrdiff_t>((first + count) * cols_),
            out.data_.begin());
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require(x.size() == y.size(), "axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Vec scaled(const Vec& v, double s) {
  Vec out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) out[i] = v[i] * s;
  return out;
}

Vec add(const Vec& a, const Vec& b) {
  require(a.dim() == b.dim(), "add: length mismatch");
  Vec out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] + b[i];
  return out;
}

Vec sub(const Vec& a, const Vec& b) {
  require(a.dim() == b.dim(), "sub: length mismatch");
  Vec out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] - b[i];
  return out;
}

Vec normalized(const Vec& v) {
  const double n = norm(v.span());
  if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("normalized: zero or non-finite vector");
  Vec out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) out[i] = v[i] / n;
  return out;
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Mat matmul(const Mat& a, const Mat& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Mat out(n, m);
  const double* A = a.span().data();
  const double* B = b.span().data();
  double* C = out.span().data();
  // 4 x 8 register tiles; every output still accumulates over k in order.
  constexpr std::size_t TI = 4, TJ = 8;
  std::size_t i = 0;
  for (; i + TI <= n; i += TI) {
    std::size_t j = 0;
    for (; j + TJ <= m; j += TJ) {
      double acc[TI][TJ] = {};
      for (std::size_t p = 0; p < k; ++p) {
        const double* br = B + p * m + j;
        for (std::size_t r = 0; r < TI; ++r) {
          const double av = A[(i + r) * k + p];
          for (std::size_t c = 0; c < TJ; ++c) acc[r][c] += av * br[c];
        }
      }
      for (std::size_t r = 0; r < TI; ++r)
        for (std::size_t c = 0; c < TJ; ++c) C[(i + r) * m + j + c] = acc[r][c];
    }
    for (std::size_t r = 0; r < TI; ++r)
      for (std::size_t jj = j; jj < m; ++jj) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += A[(i + r) * k + p] * B[p * m + jj];
        C[(i + r) * m + jj] = acc;
      }
  }
  for (; i < n; ++i) {
    double* o = C + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* br = B + p * m;
      for (std::size_t jj = 0; jj < m; ++jj) o[jj] += av * br[jj];
    }
  }
  return out;
}

Mat transpose(const Mat& a) {
  Mat out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  return matmul(a, transpose(b));
}

Mat matmul_tn(const Mat& a, const Mat& b) {
  require(a.rows() == b.rows(), "matmul_tn: inner dimension mismatch");
  Mat out(a.cols(), b.cols());
  accumulate_tn(a, b, out);
  return out;
}

void accumulate_tn(const Mat& a, const Mat& b, Mat& out) {
  require(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols(),
          "accumulate_tn: shape mismatch");
  const std::size_t m = b.cols();
  for (std::size_t p = 0; p < a.rows(); ++p) {
    const double* ar = a.row(p).data();
    const double* br = b.row(p).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

void add_inplace(Mat& a, const Mat& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add_inplace: shape mismatch");
  auto x = a.span();
  auto y = b.span();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

void add_row_bias(Mat& a, std::span<const double> bias) {
  require(bias.size() == a.cols(), "add_row_bias: width mismatch");
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
}

void accumulate_column_sums(const Mat& g, std::span<double> out) {
  require(out.size() == g.cols(), "accumulate_column_sums: width mismatch");
  for (std::size_t i = 0; i < g.rows(); ++i) {
    auto r = g.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
  }
}

Vec matvec(const Mat& w, std::span<const double> x) {
  require(w.cols() == x.size(), "matvec: width mismatch");
  Vec out(w.rows());
  for (std::size_t i = 0; i < w.rows(); ++i) out[i] = dot(w.row(i), x);
  return out;
}

void softmax_inplace(std::span<double> logits) {
  if (logits.empty()) throw ShapeError("softmax: empty input");
  double mx = logits[0];
  for (double v : logits) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite logit");
    mx = std::max(mx, v);
  }
  double sum = 0.0;
  for (double& v : logits) {
    v = std::exp(v - mx);
    sum += v;
  }
  const double inv = 1.0 / sum;
  for (double& v : logits) v *= inv;
}

Vec softmax(const Vec& logits) {
  Vec out = logits;
  softmax_inplace(out.span());
  return out;
}

void RopeParams::validate() const {
  if (head_dim == 0 || head_dim % 4 != 0)
    throw ConfigError("rope: head_dim must be a positive multiple of 4, got " +
                      std::to_string(head_dim));
  if (!(base > 1.0)) throw ConfigError("rope: base frequency must exceed 1");
}

void rope_rotate(std::span<double> token, GridPos pos, const RopeParams& params, bool inverse) {
  params.validate();
  if (token.size() != params.head_dim) throw ShapeError("rope: token dim != head_dim");
  const std::size_t axis_dim = params.head_dim / 2;
  const std::size_t pairs = axis_dim / 2;
  for (std::size_t axis = 0; axis < 2; ++axis) {
    const double coord = axis == 0 ? pos.row : pos.col;
    if (coord == 0.0) continue;
    const std::size_t offset = axis * axis_dim;
    for (std::size_t k = 0; k < pairs; ++k) {
      const double freq =
          std::pow(params.base, -2.0 * static_cast<double>(k) / static_cast<double>(axis_dim));
      const double angle = (inverse ? -coord : coord) * freq;
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      double& x0 = token[offset + 2 * k];
      double& x1 = token[offset + 2 * k + 1];
      const double a = x0;
      const double b = x1;
      x0 = a * c - b * s;
      x1 = a * s + b * c;
    }
  }
}

Vec rope_apply(const Vec& token, GridPos pos, const RopeParams& params) {
  Vec out = token;
  rope_rotate(out.span(), pos, params);
  return out;
}

Vec sincos_code(double row, double col, std::size_t dim) {
  if (dim == 0 || dim % 4 != 0) throw ConfigError("sincos_code: dim must be a multiple of 4");
  const std::size_t q = dim / 4;
  Vec out(dim);
  for (std::size_t axis = 0; axis < 2; ++axis) {
    const double x = axis == 0 ? row : col;
    const std::size_t offset = axis * (dim / 2);
    for (std::size_t k = 0; k < q; ++k) {
      const double w = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(q));
      out[offset + 2 * k] = std::sin(x * w);
      out[offset + 2 * k + 1] = std::cos(x * w);
    }
  }
  return out;
}

Mat attention_forward(const Mat& queries, const Mat& keys, const Mat& values, double scale,
                      AttentionCache& cache) {
  require(keys.rows() == values.rows(), "attention: key/value row counts differ");
  require(queries.cols() == keys.cols(), "attention: query/key widths differ");
  require(keys.rows() > 0, "attention: no keys");
  Mat scores = matmul_nt(queries, keys);
  for (double& v : scores.span()) v *= scale;
  for (std::size_t i = 0; i < scores.rows(); ++i) softmax_inplace(scores.row(i));
  Mat out = matmul(scores, values);
  cache.weights = std::move(scores);
  return out;
}

Mat attention(const Mat& queries, const Mat& keys, const Mat& values, double scale) {
  AttentionCache cache;
  return attention_forward(queries, keys, values, scale, cache);
}

AttentionGrads attention_backward(const Mat& queries, const Mat& keys, const Mat& values,
                                  double scale, const AttentionCache& cache,
                                  const Mat& upstream) {
  const Mat& w = cache.weights;
  require(w.rows() == queries.rows() && w.cols() == keys.rows(),
          "attention_backward: cache does not match inputs");
  AttentionGrads g;
  g.values = matmul_tn(w, upstream);
  Mat dw = matmul_nt(upstream, values);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    auto wr = w.row(i);
    auto dr = dw.row(i);
    const double inner = dot(wr, dr);
    for (std::size_t j = 0; j < wr.size(); ++j) dr[j] = wr[j] * (dr[j] - inner) * scale;
  }
  g.queries = matmul(dw, keys);
  g.keys = matmul_tn(dw, queries);
  return g;
}

LayerNormParams LayerNormParams::identity(std::size_t dim) {
  return {Vec(dim, 1.0), Vec(dim, 0.0)};
}

Mat layer_norm_forward(const Mat& x, const LayerNormParams& p, LayerNormCache& cache) {
  require(p.gain.dim() == x.cols() && p.bias.dim() == x.cols(), "layer_norm: width mismatch");
  const std::size_t d = x.cols();
  Mat out(x.rows(), d);
  cache.normalized = Mat(x.rows(), d);
  cache.inv_std.assign(x.rows(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.inv_std[i] = inv;
    auto xh = cache.normalized.row(i);
    auto o = out.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (r[j] - mean) * inv;
      o[j] = xh[j] * p.gain[j] + p.bias[j];
    }
  }
  return out;
}

Mat layer_norm_backward(const LayerNormParams& p, const LayerNormCache& cache, const Mat& upstream,
                        LayerNormParams& grads) {
  const std::size_t d = upstream.cols();
  require(cache.normalized.rows() == upstream.rows() && cache.normalized.cols() == d,
          "layer_norm_backward: cache mismatch");
  Mat dx(upstream.rows(), d);
  std::vector<double> dxh(d);
  for (std::size_t i = 0; i < upstream.rows(); ++i) {
    auto g = upstream.row(i);
    auto xh = cache.normalized.row(i);
    double mean_dxh = 0.0;
    double mean_dxh_xh = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      grads.gain[j] += g[j] * xh[j];
      grads.bias[j] += g[j];
      dxh[j] = g[j] * p.gain[j];
      mean_dxh += dxh[j];
      mean_dxh_xh += dxh[j] * xh[j];
    }
    mean_dxh /= static_cast<double>(d);
    mean_dxh_xh /= static_cast<double>(d);
    auto o = dx.row(i);
    for (std::size_t j = 0; j < d; ++j)
      o[j] = cache.inv_std[i] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
  }
  return dx;
}

Mat init_uniform(std::size_t rows, std::size_t fan_in, CounterRng& rng) {
  Mat out(rows, fan_in);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : out.span()) v = rng.uniform(-bound, bound);
  return out;
}

Vec init_uniform_vec(std::size_t dim, std::size_t fan_in, CounterRng& rng) {
  Vec out(dim);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : out.span()) v = rng.uniform(-bound, bound);
  return out;
}

Mlp Mlp::zeros(std::size_t in, std::size_t hidden, std::size_t out, OutputActivation act) {
  return Mlp{Mat(hidden, in), Vec(hidden), Mat(out, hidden), Vec(out), act, 0};
}

Mlp Mlp::seeded(std::size_t in, std::size_t hidden, std::size_t out, OutputActivation act,
                CounterRng& rng) {
  Mlp m;
  m.w1 = init_uniform(hidden, in, rng);
  m.b1 = init_uniform_vec(hidden, in, rng);
  m.w2 = init_uniform(out, hidden, rng);
  m.b2 = init_uniform_vec(out, hidden, rng);
  m.out_activation = act;
  return m;
}

void Mlp::validate() const {
  require(w1.rows() > 0 && w1.cols() > 0 && w2.rows() > 0, "Mlp: empty layer");
  require(b1.dim() == w1.rows(), "Mlp: b1 does not match W1");
  require(w2.cols() == w1.rows(), "Mlp: W2 does not chain with W1");
  require(b2.dim() == w2.rows(), "Mlp: b2 does not match W2");
}

MlpResult mlp_forward(const Mlp& m, const Vec& x) {
  m.validate();
  require(x.dim() == m.in_dim(), "mlp_forward: input width mismatch");
  MlpResult r;
  r.cache.owner = &m;
  r.cache.revision = m.revision;
  r.cache.input = x;
  r.cache.hidden_pre = add(matvec(m.w1, x.span()), m.b1);
  r.cache.hidden = Vec(m.hidden_dim());
  for (std::size_t i = 0; i < m.hidden_dim(); ++i)
    r.cache.hidden[i] = std::max(0.0, r.cache.hidden_pre[i]);
  Vec y = add(matvec(m.w2, r.cache.hidden.span()), m.b2);
  if (m.out_activation == OutputActivation::kSigmoid)
    for (std::size_t i = 0; i < y.dim(); ++i) y[i] = sigmoid(y[i]);
  r.cache.output = y;
  r.output = std::move(y);
  return r;
}

MlpGrads mlp_backward(const Mlp& m, const MlpCache& cache, const Vec& upstream) {
  if (cache.owner != &m || cache.revision != m.revision)
    throw Error("mlp_backward: stale cache (parameters changed since forward)");
  require(upstream.dim() == m.out_dim(), "mlp_backward: upstream width mismatch");
  Vec dpre2 = upstream;
  if (m.out_activation == OutputActivation::kSigmoid)
    for (std::size_t i = 0; i < dpre2.dim(); ++i)
      dpre2[i] *= cache.output[i] * (1.0 - cache.output[i]);
  MlpGrads g{Mat(m.w1.rows(), m.w1.cols()), Vec(m.b1.dim()), Mat(m.w2.rows(), m.w2.cols()),
             Vec(m.b2.dim()), Vec(m.in_dim())};
  Vec dh(m.hidden_dim());
  for (std::size_t o = 0; o < m.out_dim(); ++o) {
    g.b2[o] = dpre2[o];
    for (std::size_t h = 0; h < m.hidden_dim(); ++h) {
      g.w2(o, h) = dpre2[o] * cache.hidden[h];
      dh[h] += dpre2[o] * m.w2(o, h);
    }
  }
  for (std::size_t h = 0; h < m.hidden_dim(); ++h) {
    const double dpre1 = cache.hidden_pre[h] > 0.0 ? dh[h] : 0.0;
    g.b1[h] = dpre1;
    for (std::size_t i = 0; i < m.in_dim(); ++i) {
      g.w1(h, i) = dpre1 * cache.input[i];
      g.input[i] += dpre1 * m.w1(h, i);
    }
  }
  return g;
}

Mat mlp_forward_rows(const Mlp& m, const Mat& x, MlpRowsCache& cache) {
  require(x.cols() == m.in_dim(), "mlp_forward_rows: input width mismatch");
  cache.input = x;
  cache.hidden_pre = matmul_nt(x, m.w1);
  add_row_bias(cache.hidden_pre, m.b1.span());
  cache.hidden = cache.hidden_pre;
  for (double& v : cache.hidden.span()) v = std::max(0.0, v);
  Mat y = matmul_nt(cache.hidden, m.w2);
  add_row_bias(y, m.b2.span());
  if (m.out_activation == OutputActivation::kSigmoid)
    for (double& v : y.span()) v = sigmoid(v);
  cache.output = y;
  return y;
}

Mat mlp_backward_rows(const Mlp& m, const MlpRowsCache& cache, const Mat& upstream, Mlp& grads) {
  Mat dpre2 = upstream;
  if (m.out_activation == OutputActivation::kSigmoid) {
    auto d = dpre2.span();
    auto y = cache.output.span();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= y[i] * (1.0 - y[i]);
  }
  accumulate_tn(dpre2, cache.hidden, grads.w2);
  accumulate_column_sums(dpre2, grads.b2.span());
  Mat dh = matmul(dpre2, m.w2);
  {
    auto d = dh.span();
    auto pre = cache.hidden_pre.span();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (pre[i] <= 0.0) d[i] = 0.0;
  }
  accumulate_tn(dh, cache.input, grads.w1);
  accumulate_column_sums(dh, grads.b1.span());
  return matmul(dh, m.w1);
}

void sgd_step(std::span<double> params, std::span<const double> grads, double lr) {
  require(params.size() == grads.size(), "sgd_step: parameter/gradient size mismatch");
  if (!(lr >= 0.0)) throw ConfigError("sgd_step: learning rate must be non-negative");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

void sgd_step(Mlp& m, const MlpGrads& grads, double lr) {
  sgd_step(m.w1.span(), grads.w1.span(), lr);
  sgd_step(m.b1.span(), grads.b1.span(), lr);
  sgd_step(m.w2.span(), grads.w2.span(), lr);
  sgd_step(m.b2.span(), grads.b2.span(), lr);
  ++m.revision;
}

}  // namespace emasam
