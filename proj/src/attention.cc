#include "vfiqa/attention.h"

#include <cmath>
#include <string>

#include "vfiqa/ops.h"

namespace vfiqa {

int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  const int64_t period = 2 * (n - 1);
  int64_t m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

namespace {

// Region label of a position in the rolled, padded axis of extent `padded`.
// Positions from different regions were not contiguous before the roll.
int region(int64_t p, int64_t padded, int window, int shift) {
  if (p < padded - window) return 0;
  if (p < padded - shift) return 1;
  return 2;
}

}  // namespace

template <typename T>
Tensor<T> window_attention(const Tensor<T>& x, int window, int heads,
                           const AttentionWeights<T>& weights, bool shifted,
                           Tensor<T>* attention_out) {
  if (x.rank() != 4) {
    throw ShapeError("window_attention: input must be [B,C,H,W], got " +
                     shape_str(x.shape()));
  }
  if (window < 1) throw ConfigError("window_attention: window must be >= 1");
  if (heads < 1) throw ConfigError("window_attention: heads must be >= 1");
  const int64_t batch = x.dim(0), channels = x.dim(1);
  const int64_t height = x.dim(2), width = x.dim(3);
  if (channels % heads != 0) {
    throw ConfigError("window_attention: " + std::to_string(channels) +
                      " channels not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (weights.qkv_weight.shape() != Shape{3 * channels, channels}) {
    throw ShapeError("window_attention: qkv weight must be " +
                     shape_str({3 * channels, channels}) + ", got " +
                     shape_str(weights.qkv_weight.shape()));
  }
  if (weights.proj_weight.shape() != Shape{channels, channels}) {
    throw ShapeError("window_attention: proj weight must be " +
                     shape_str({channels, channels}) + ", got " +
                     shape_str(weights.proj_weight.shape()));
  }

  const int64_t head_dim = channels / heads;
  const int64_t padded_h = (height + window - 1) / window * window;
  const int64_t padded_w = (width + window - 1) / window * window;
  const int64_t win_rows = padded_h / window, win_cols = padded_w / window;
  const int64_t per_image = win_rows * win_cols;
  const int64_t groups = batch * per_image;
  const int64_t tokens = static_cast<int64_t>(window) * window;
  const int shift = shifted ? window / 2 : 0;

  // Pad, roll and tile in a single gather: [groups, tokens, C].
  auto tile_index = std::make_shared<std::vector<int64_t>>(
      static_cast<size_t>(groups * tokens * channels));
  for (int64_t g = 0; g < groups; ++g) {
    const int64_t b = g / per_image;
    const int64_t wy = (g % per_image) / win_cols;
    const int64_t wx = g % win_cols;
    for (int64_t t = 0; t < tokens; ++t) {
      const int64_t py = (wy * window + t / window + shift) % padded_h;
      const int64_t px = (wx * window + t % window + shift) % padded_w;
      const int64_t sy = reflect_index(py, height);
      const int64_t sx = reflect_index(px, width);
      int64_t* dst = tile_index->data() + (g * tokens + t) * channels;
      for (int64_t c = 0; c < channels; ++c) {
        dst[c] = ((b * channels + c) * height + sy) * width + sx;
      }
    }
  }
  Tensor<T> tiles = ops::gather(x, {groups, tokens, channels}, tile_index);

  Tensor<T> qkv = ops::linear(tiles, weights.qkv_weight, weights.qkv_bias);
  qkv = ops::reshape(qkv, {groups, tokens, 3, heads, head_dim});
  qkv = ops::permute(qkv, {2, 0, 3, 1, 4});
  auto split = [&](int64_t which) {
    return ops::reshape(ops::slice(qkv, 0, which, 1),
                        {groups * heads, tokens, head_dim});
  };
  Tensor<T> q = split(0), k = split(1), v = split(2);

  Tensor<T> scores = ops::scale(ops::bmm(q, k, /*transpose_b=*/true),
                                T(1) / std::sqrt(static_cast<T>(head_dim)));
  if (shift > 0) {
    // Constant additive mask; large finite value keeps every entry finite.
    constexpr T kMasked = T(-1e30);
    std::vector<int> label(static_cast<size_t>(per_image * tokens));
    for (int64_t w = 0; w < per_image; ++w) {
      for (int64_t t = 0; t < tokens; ++t) {
        const int64_t py = (w / win_cols) * window + t / window;
        const int64_t px = (w % win_cols) * window + t % window;
        label[w * tokens + t] = region(py, padded_h, window, shift) * 3 +
                                region(px, padded_w, window, shift);
      }
    }
    Tensor<T> mask = Tensor<T>::zeros(scores.shape());
    auto m = mask.mutable_data();
    for (int64_t gh = 0; gh < groups * heads; ++gh) {
      const int64_t w = (gh / heads) % per_image;
      for (int64_t i = 0; i < tokens; ++i) {
        for (int64_t j = 0; j < tokens; ++j) {
          if (label[w * tokens + i] != label[w * tokens + j]) {
            m[(gh * tokens + i) * tokens + j] = kMasked;
          }
        }
      }
    }
    scores = ops::add(scores, mask);
  }
  Tensor<T> attn = ops::softmax(scores);
  if (attention_out != nullptr) {
    *attention_out = Tensor<T>::from_vector(
        {groups, heads, tokens, tokens},
        std::vector<T>(attn.data().begin(), attn.data().end()));
  }

  Tensor<T> mixed = ops::bmm(attn, v, /*transpose_b=*/false);
  mixed = ops::reshape(mixed, {groups, heads, tokens, head_dim});
  mixed = ops::permute(mixed, {0, 2, 1, 3});
  mixed = ops::reshape(mixed, {groups, tokens, channels});
  Tensor<T> projected =
      ops::linear(mixed, weights.proj_weight, weights.proj_bias);

  // Untile, unroll and crop back to [B,C,H,W].
  auto untile_index = std::make_shared<std::vector<int64_t>>(
      static_cast<size_t>(batch * channels * height * width));
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t c = 0; c < channels; ++c) {
      for (int64_t y = 0; y < height; ++y) {
        const int64_t ry = (y - shift + padded_h) % padded_h;
        for (int64_t xx = 0; xx < width; ++xx) {
          const int64_t rx = (xx - shift + padded_w) % padded_w;
          const int64_t g =
              b * per_image + (ry / window) * win_cols + rx / window;
          const int64_t t = (ry % window) * window + rx % window;
          (*untile_index)[((b * channels + c) * height + y) * width + xx] =
              (g * tokens + t) * channels + c;
        }
      }
    }
  }
  return ops::gather(projected, x.shape(), untile_index);
}

template Tensor<float> window_attention(const Tensor<float>&, int, int,
                                        const AttentionWeights<float>&, bool,
                                        Tensor<float>*);
template Tensor<double> window_attention(const Tensor<double>&, int, int,
                                         const AttentionWeights<double>&, bool,
                                         Tensor<double>*);

}  // namespace vfiqa
