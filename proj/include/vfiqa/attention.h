#pragma once

#include "vfiqa/tensor.h"

namespace vfiqa {

// Projections of one windowed multi-head self-attention layer.
// qkv_weight [3C, C], qkv_bias [3C], proj_weight [C, C], proj_bias [C].
// Query, key and value rows are stacked in that order in qkv_weight.
template <typename T>
struct AttentionWeights {
  Tensor<T> qkv_weight;
  Tensor<T> qkv_bias;
  Tensor<T> proj_weight;
  Tensor<T> proj_bias;
};

// Multi-head self-attention restricted to non-overlapping window x window
// tiles of x [B,C,H,W]. Extents that are not multiples of the window are
// reflect-padded and the result is cropped back. With `shifted`, the padded
// map is cyclically rolled by window/2 on both axes before tiling and rolled
// back afterwards; tokens that were not neighbours before the roll cannot
// attend to each other. Scores are scaled by 1/sqrt(C/heads). There is no
// relative position bias term.
//
// When `attention_out` is non-null it receives the softmax weights as
// [B * windows, heads, window^2, window^2].
template <typename T>
Tensor<T> window_attention(const Tensor<T>& x, int window, int heads,
                           const AttentionWeights<T>& weights, bool shifted,
                           Tensor<T>* attention_out = nullptr);

// Index of the row/column that padded position `i` reads from in an axis of
// extent `n`, using repeated mirror reflection (edge samples not repeated).
int64_t reflect_index(int64_t i, int64_t n);

}  // namespace vfiqa
