#pragma once

#include <random>
#include <vector>

#include "vfiqa/tensor.h"

namespace vfiqa {

template <typename T>
struct ConvWeights {
  Tensor<T> weight;  // [O, C, k, k]
  Tensor<T> bias;    // [O]
};

struct PyramidConfig {
  std::vector<int> channels{16, 32, 64, 96, 128};
  float slope = 0.1f;

  int levels() const { return static_cast<int>(channels.size()); }
  // Smallest extent that keeps the coarsest level at least 1x1 and every
  // level an exact halving.
  int min_extent() const { return 1 << levels(); }
  void validate() const;
};

// Two 3x3 convolutions per level; the second has stride 2.
template <typename T>
struct PyramidLevelWeights {
  ConvWeights<T> conv1;
  ConvWeights<T> conv2;
};

template <typename T>
struct PyramidWeights {
  std::vector<PyramidLevelWeights<T>> levels;
};

// He-uniform (fan-in, leaky slope) weights, zero biases.
template <typename T>
PyramidWeights<T> init_pyramid(const PyramidConfig& config, std::mt19937_64& rng);

// Per-frame features for frames [B,3,H,W]. Level l (0-based) has
// config.channels[l] channels at H/2^(l+1) x W/2^(l+1).
template <typename T>
std::vector<Tensor<T>> extract(const Tensor<T>& frames,
                               const PyramidWeights<T>& weights,
                               const PyramidConfig& config);

// per_frame[n][l] is frame n's level-l features [B,C,h,w]. Returns, per
// level, [B, N*C, h, w] with frame n occupying channels [n*C, (n+1)*C).
template <typename T>
std::vector<Tensor<T>> concat_frames(
    const std::vector<std::vector<Tensor<T>>>& per_frame);

// Same layout as concat_frames for features extracted from a frame batch
// [clips*N, C, h, w] laid out clip-major: returns [clips, N*C, h, w].
template <typename T>
Tensor<T> fold_frames(const Tensor<T>& level, int64_t frames);

}  // namespace vfiqa
