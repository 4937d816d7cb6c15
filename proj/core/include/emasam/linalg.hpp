#pragma once

// Minimal dense linear algebra, attention primitives, rotary embeddings and a
// manually differentiated two-layer MLP.  Everything is float64 and
// row-major; token sets are matrices with one token per row.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <vector>

#include "emasam/error.hpp"
#include "emasam/rng.hpp"

namespace emasam {

class Vec {
 public:
  Vec() = default;
  explicit Vec(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
  explicit Vec(std::vector<double> data) : data_(std::move(data)) {}
  Vec(std::initializer_list<double> values) : data_(values) {}

  std::size_t dim() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  bool all_finite() const noexcept;

  bool operator==(const Vec&) const = default;

 private:
  std::vector<double> data_;
};

class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  Vec row_vec(std::size_t r) const;
  void set_row(std::size_t r, std::span<const double> values);

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }

  bool all_finite() const noexcept;
  bool operator==(const Mat&) const = default;

  /// Rows [first, first + count) as a new matrix.
  Mat slice_rows(std::size_t first, std::size_t count) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---- vector helpers --------------------------------------------------------

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
Vec scaled(const Vec& v, double s);
Vec add(const Vec& a, const Vec& b);
Vec sub(const Vec& a, const Vec& b);
/// v / ||v||; throws NumericError for a zero vector.
Vec normalized(const Vec& v);

double sigmoid(double x) noexcept;

// ---- matrix products -------------------------------------------------------

/// A (n x k) * B (k x m)
Mat matmul(const Mat& a, const Mat& b);
/// A (n x k) * B^T where B is (m x k)
Mat matmul_nt(const Mat& a, const Mat& b);
/// A^T * B where A is (k x n), B is (k x m)
Mat matmul_tn(const Mat& a, const Mat& b);
Mat transpose(const Mat& a);
/// In-place a += b
void add_inplace(Mat& a, const Mat& b);
void add_row_bias(Mat& a, std::span<const double> bias);
/// Row sums of g, accumulated into `out` (length g.cols()).
void accumulate_column_sums(const Mat& g, std::span<double> out);
/// out += A^T * B, accumulate form of matmul_tn
void accumulate_tn(const Mat& a, const Mat& b, Mat& out);
/// y = W x (W is out x in)
Vec matvec(const Mat& w, std::span<const double> x);

// ---- softmax ---------------------------------------------------------------

/// Max-subtracted softmax.  Throws NumericError on non-finite input and
/// ShapeError on an empty vector.
Vec softmax(const Vec& logits);
void softmax_inplace(std::span<double> logits);

// ---- positions ---------------------------------------------------------------

struct GridPos {
  int row = 0;
  int col = 0;
  bool operator==(const GridPos&) const = default;
};

/// Two-axis rotary embedding.  The first head_dim/2 channels rotate with the
/// row coordinate, the second half with the column coordinate; channel pairs
/// (2k, 2k+1) inside an axis block turn at frequency base^(-2k / (head_dim/2)).
struct RopeParams {
  std::size_t head_dim = 32;
  double base = 10000.0;

  void validate() const;
};

Vec rope_apply(const Vec& token, GridPos pos, const RopeParams& params);
/// Rotates `token` in place; `inverse` applies the transpose rotation.
void rope_rotate(std::span<double> token, GridPos pos, const RopeParams& params,
                 bool inverse = false);

/// Absolute sine-cosine code of a (possibly fractional) 2-D position.
/// Layout per axis (rows first): [sin(x w_0), cos(x w_0), sin(x w_1), ...]
/// with w_k = 10000^(-k / (dim/4)).  dim must be divisible by 4.
Vec sincos_code(double row, double col, std::size_t dim);

// ---- attention ---------------------------------------------------------------

/// out_i = softmax(scale * q_i . K^T) V
Mat attention(const Mat& queries, const Mat& keys, const Mat& values, double scale);

struct AttentionCache {
  Mat weights;  // n_q x n_k, rows sum to one
};

Mat attention_forward(const Mat& queries, const Mat& keys, const Mat& values, double scale,
                      AttentionCache& cache);

struct AttentionGrads {
  Mat queries;
  Mat keys;
  Mat values;
};

AttentionGrads attention_backward(const Mat& queries, const Mat& keys, const Mat& values,
                                  double scale, const AttentionCache& cache,
                                  const Mat& upstream);

// ---- layer norm --------------------------------------------------------------

struct LayerNormParams {
  Vec gain;
  Vec bias;
  static LayerNormParams identity(std::size_t dim);
};

struct LayerNormCache {
  Mat normalized;              // x_hat
  std::vector<double> inv_std;  // per row
};

inline constexpr double kLayerNormEps = 1e-5;

Mat layer_norm_forward(const Mat& x, const LayerNormParams& p, LayerNormCache& cache);
/// Returns dL/dx; accumulates parameter gradients into `grads`.
Mat layer_norm_backward(const LayerNormParams& p, const LayerNormCache& cache, const Mat& upstream,
                        LayerNormParams& grads);

// ---- linear ------------------------------------------------------------------

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) fill.
Mat init_uniform(std::size_t rows, std::size_t fan_in, CounterRng& rng);
Vec init_uniform_vec(std::size_t dim, std::size_t fan_in, CounterRng& rng);

// ---- two-layer MLP -------------------------------------------------------------

enum class OutputActivation { kIdentity, kSigmoid };

/// y = act_out(W2 relu(W1 x + b1) + b2)
struct Mlp {
  Mat w1;  // hidden x in
  Vec b1;
  Mat w2;  // out x hidden
  Vec b2;
  OutputActivation out_activation = OutputActivation::kIdentity;
  /// Bumped by every optimizer step; caches record it to detect staleness.
  std::uint64_t revision = 0;

  static Mlp zeros(std::size_t in, std::size_t hidden, std::size_t out, OutputActivation act);
  static Mlp seeded(std::size_t in, std::size_t hidden, std::size_t out, OutputActivation act,
                    CounterRng& rng);

  std::size_t in_dim() const noexcept { return w1.cols(); }
  std::size_t hidden_dim() const noexcept { return w1.rows(); }
  std::size_t out_dim() const noexcept { return w2.rows(); }
  void validate() const;
};

struct MlpCache {
  const Mlp* owner = nullptr;
  std::uint64_t revision = 0;
  Vec input;
  Vec hidden_pre;
  Vec hidden;
  Vec output;
};

struct MlpGrads {
  Mat w1;
  Vec b1;
  Mat w2;
  Vec b2;
  Vec input;  // dL/dx
};

struct MlpResult {
  Vec output;
  MlpCache cache;
};

MlpResult mlp_forward(const Mlp& m, const Vec& x);
/// `upstream` is dL/dy.  Throws if `cache` did not come from a forward pass
/// of this exact Mlp at its current revision.
MlpGrads mlp_backward(const Mlp& m, const MlpCache& cache, const Vec& upstream);

/// Row-wise variant used for token-wise blocks: Y = act(relu(X W1^T + b1) W2^T + b2).
struct MlpRowsCache {
  Mat input;
  Mat hidden_pre;
  Mat hidden;
  Mat output;
};
Mat mlp_forward_rows(const Mlp& m, const Mat& x, MlpRowsCache& cache);
/// Returns dL/dX; accumulates parameter gradients into `grads` (same shapes as m).
Mat mlp_backward_rows(const Mlp& m, const MlpRowsCache& cache, const Mat& upstream, Mlp& grads);

// ---- optimisation ------------------------------------------------------------------

/// p <- p - lr * g, elementwise.  lr must be >= 0.
void sgd_step(std::span<double> params, std::span<const double> grads, double lr);
void sgd_step(Mlp& m, const MlpGrads& grads, double lr);

}  // namespace emasam
