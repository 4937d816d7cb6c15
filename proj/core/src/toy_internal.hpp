#pragma once

// Cached forward passes shared by inference and training.

#include <vector>

#include "emasam/toy_model.hpp"

namespace emasam::detail {

struct Interp1d {
  std::vector<int> i0, i1;
  std::vector<double> w0, w1;
};
Interp1d interp_weights(int out_len, int in_len);

struct DecodeCache {
  LayerNormCache norm;
  Mat normed;
  std::size_t patch_row0 = 0;
  std::size_t confidence_row = 0;
  Mat grid_logits;  // grid_rows x grid_cols
  MlpCache confidence;
  double iou_pre = 0.0;
  double pointer_norm = 0.0;
};

DecoderOutput decode_forward(const ToyModel& m, const Mat& conditioned, const FrameEmbedding& e,
                             DecodeCache* cache);

struct MemEncCache {
  Mat x0, x1;
  MlpRowsCache f1, f2;
};

Mat memory_tokens_forward(const ToyModel& m, const Mat& embedding, const std::vector<double>& pooled,
                          MemEncCache* cache);

Mat embed_patches(const ToyModel& m, const Mat& patches);

}  // namespace emasam::detail
