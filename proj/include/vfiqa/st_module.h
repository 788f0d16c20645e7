#pragma once

#include <random>
#include <vector>

#include "vfiqa/attention.h"
#include "vfiqa/pyramid.h"
#include "vfiqa/tensor.h"

namespace vfiqa {

struct STConfig {
  int embed_dim = 32;
  int heads = 2;
  int window = 4;
  // Pre-norm LayerNorms in every block.
  bool use_layer_norm = false;
  // Blocks alternate unshifted / shifted windows.
  int blocks_per_level = 2;
  int mlp_ratio = 4;

  void validate() const;
};

template <typename T>
struct SwinBlockWeights {
  Tensor<T> norm1_gamma, norm1_beta;  // defined only with use_layer_norm
  AttentionWeights<T> attn;
  Tensor<T> norm2_gamma, norm2_beta;
  ConvWeights<T> fc1;  // 1x1, embed_dim -> mlp_ratio * embed_dim
  ConvWeights<T> fc2;  // 1x1, back to embed_dim
};

template <typename T>
struct STLevelWeights {
  ConvWeights<T> embed;  // 1x1, 3 * in_channels -> embed_dim
  std::vector<SwinBlockWeights<T>> blocks;
};

template <typename T>
STLevelWeights<T> init_st_level(int in_channels, const STConfig& config,
                                std::mt19937_64& rng);

template <typename T>
struct NormalizedFeatures {
  Tensor<T> input;      // unit channel vectors of F
  Tensor<T> reference;  // unit channel vectors of F_R
  Tensor<T> diff;       // |input - reference|
};

template <typename T>
NormalizedFeatures<T> normalize_pair(const Tensor<T>& features,
                                     const Tensor<T>& reference);

template <typename T>
Tensor<T> normalized_diff(const Tensor<T>& features,
                          const Tensor<T>& reference) {
  return normalize_pair(features, reference).diff;
}

// Concatenates (diff, input, reference) along channels and applies the 1x1
// linear embedding.
template <typename T>
Tensor<T> assemble_and_embed(const Tensor<T>& diff, const Tensor<T>& input,
                             const Tensor<T>& reference,
                             const ConvWeights<T>& embed);

template <typename T>
Tensor<T> swin_blocks(const Tensor<T>& embedded,
                      const std::vector<SwinBlockWeights<T>>& blocks,
                      const STConfig& config);

template <typename T>
struct DistanceOutput {
  Tensor<T> d;                     // [B]
  std::vector<Tensor<T>> per_level;  // L tensors of [B]
};

// Per-level element mean (per batch item), then the unweighted mean over
// levels.
template <typename T>
DistanceOutput<T> pool_distance(const std::vector<Tensor<T>>& per_level);

// Full head for one level: normalize, diff, embed, transformer blocks.
template <typename T>
Tensor<T> st_level(const Tensor<T>& features, const Tensor<T>& reference,
                   const STLevelWeights<T>& weights, const STConfig& config);

}  // namespace vfiqa
