#include "vfiqa/st_module.h"

#include <cmath>
#include <string>

#include "vfiqa/ops.h"

namespace vfiqa {

void STConfig::validate() const {
  if (embed_dim <= 0) throw ConfigError("st: embed_dim must be positive");
  if (heads <= 0 || embed_dim % heads != 0) {
    throw ConfigError("st: embed_dim " + std::to_string(embed_dim) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  if (window < 1) throw ConfigError("st: window must be >= 1");
  if (blocks_per_level < 0) throw ConfigError("st: negative block count");
  if (mlp_ratio < 1) throw ConfigError("st: mlp_ratio must be >= 1");
}

namespace {

template <typename T>
Tensor<T> uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> values(static_cast<size_t>(numel(shape)));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>::from_vector(std::move(shape), std::move(values), true);
}

template <typename T>
ConvWeights<T> pointwise(int out_ch, int in_ch, std::mt19937_64& rng) {
  return {uniform<T>({out_ch, in_ch, 1, 1}, 1.0 / std::sqrt(in_ch), rng),
          Tensor<T>::zeros({out_ch}, true)};
}

template <typename T>
Tensor<T> maybe_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, bool enabled) {
  return enabled ? ops::channel_layer_norm(x, gamma, beta) : x;
}

}  // namespace

template <typename T>
STLevelWeights<T> init_st_level(int in_channels, const STConfig& config,
                                std::mt19937_64& rng) {
  config.validate();
  const int c = config.embed_dim;
  const double bound = 1.0 / std::sqrt(c);
  STLevelWeights<T> level;
  level.embed = pointwise<T>(c, 3 * in_channels, rng);
  for (int b = 0; b < config.blocks_per_level; ++b) {
    SwinBlockWeights<T> block;
    if (config.use_layer_norm) {
      block.norm1_gamma = Tensor<T>::full({c}, T(1), true);
      block.norm1_beta = Tensor<T>::zeros({c}, true);
      block.norm2_gamma = Tensor<T>::full({c}, T(1), true);
      block.norm2_beta = Tensor<T>::zeros({c}, true);
    }
    block.attn.qkv_weight = uniform<T>({3 * c, c}, bound, rng);
    block.attn.qkv_bias = Tensor<T>::zeros({3 * c}, true);
    block.attn.proj_weight = uniform<T>({c, c}, bound, rng);
    block.attn.proj_bias = Tensor<T>::zeros({c}, true);
    block.fc1 = pointwise<T>(config.mlp_ratio * c, c, rng);
    block.fc2 = pointwise<T>(c, config.mlp_ratio * c, rng);
    level.blocks.push_back(std::move(block));
  }
  return level;
}

template <typename T>
NormalizedFeatures<T> normalize_pair(const Tensor<T>& features,
                                     const Tensor<T>& reference) {
  if (features.shape() != reference.shape()) {
    throw ShapeError("normalized_diff: feature shape " +
                     shape_str(features.shape()) + " differs from reference " +
                     shape_str(reference.shape()));
  }
  NormalizedFeatures<T> out;
  out.input = ops::channel_normalize(features);
  out.reference = ops::channel_normalize(reference);
  out.diff = ops::abs(ops::sub(out.input, out.reference));
  return out;
}

template <typename T>
Tensor<T> assemble_and_embed(const Tensor<T>& diff, const Tensor<T>& input,
                             const Tensor<T>& reference,
                             const ConvWeights<T>& embed) {
  if (diff.shape() != input.shape() || diff.shape() != reference.shape()) {
    throw ShapeError("assemble_and_embed: operand shapes " +
                     shape_str(diff.shape()) + ", " +
                     shape_str(input.shape()) + ", " +
                     shape_str(reference.shape()) + " differ");
  }
  Tensor<T> cat = ops::concat<T>({diff, input, reference}, 1);
  return ops::conv2d(cat, embed.weight, embed.bias, 1, 0);
}

template <typename T>
Tensor<T> swin_blocks(const Tensor<T>& embedded,
                      const std::vector<SwinBlockWeights<T>>& blocks,
                      const STConfig& config) {
  if (embedded.rank() != 4 || embedded.dim(1) != config.embed_dim) {
    throw ShapeError("swin_blocks: expected [B," +
                     std::to_string(config.embed_dim) + ",h,w], got " +
                     shape_str(embedded.shape()));
  }
  Tensor<T> x = embedded;
  for (size_t i = 0; i < blocks.size(); ++i) {
    const auto& blk = blocks[i];
    const bool shifted = (i % 2) == 1;
    Tensor<T> h = maybe_norm(x, blk.norm1_gamma, blk.norm1_beta,
                             config.use_layer_norm);
    x = ops::add(x, window_attention(h, config.window, config.heads, blk.attn,
                                     shifted));
    h = maybe_norm(x, blk.norm2_gamma, blk.norm2_beta, config.use_layer_norm);
    h = ops::gelu(ops::conv2d(h, blk.fc1.weight, blk.fc1.bias, 1, 0));
    h = ops::conv2d(h, blk.fc2.weight, blk.fc2.bias, 1, 0);
    x = ops::add(x, h);
  }
  return x;
}

template <typename T>
DistanceOutput<T> pool_distance(const std::vector<Tensor<T>>& per_level) {
  if (per_level.empty()) throw ShapeError("pool_distance: no levels");
  DistanceOutput<T> out;
  Tensor<T> total;
  for (const auto& level : per_level) {
    Tensor<T> m = ops::mean_per_item(level);
    if (total.defined() && m.shape() != total.shape()) {
      throw ShapeError("pool_distance: batch size differs across levels");
    }
    total = total.defined() ? ops::add(total, m) : m;
    out.per_level.push_back(std::move(m));
  }
  out.d = ops::scale(total, T(1) / static_cast<T>(per_level.size()));
  return out;
}

template <typename T>
Tensor<T> st_level(const Tensor<T>& features, const Tensor<T>& reference,
                   const STLevelWeights<T>& weights, const STConfig& config) {
  NormalizedFeatures<T> n = normalize_pair(features, reference);
  Tensor<T> embedded =
      assemble_and_embed(n.diff, n.input, n.reference, weights.embed);
  return swin_blocks(embedded, weights.blocks, config);
}

#define VFIQA_INSTANTIATE(T)                                                   \
  template STLevelWeights<T> init_st_level<T>(int, const STConfig&,            \
                                              std::mt19937_64&);               \
  template NormalizedFeatures<T> normalize_pair(const Tensor<T>&,              \
                                                const Tensor<T>&);             \
  template Tensor<T> assemble_and_embed(const Tensor<T>&, const Tensor<T>&,    \
                                        const Tensor<T>&,                      \
                                        const ConvWeights<T>&);                \
  template Tensor<T> swin_blocks(const Tensor<T>&,                             \
                                 const std::vector<SwinBlockWeights<T>>&,      \
                                 const STConfig&);                             \
  template DistanceOutput<T> pool_distance(const std::vector<Tensor<T>>&);     \
  template Tensor<T> st_level(const Tensor<T>&, const Tensor<T>&,              \
                              const STLevelWeights<T>&, const STConfig&);

VFIQA_INSTANTIATE(float)
VFIQA_INSTANTIATE(double)

#undef VFIQA_INSTANTIATE

}  // namespace vfiqa
