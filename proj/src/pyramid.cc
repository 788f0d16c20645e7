#include "vfiqa/pyramid.h"

#include <cmath>
#include <string>

#include "vfiqa/ops.h"

namespace vfiqa {

void PyramidConfig::validate() const {
  if (channels.empty()) throw ConfigError("pyramid: no levels");
  for (int c : channels) {
    if (c <= 0) throw ConfigError("pyramid: channel counts must be positive");
  }
  if (!(slope >= 0.0f)) throw ConfigError("pyramid: negative leaky slope");
}

namespace {

template <typename T>
ConvWeights<T> he_conv(int out_ch, int in_ch, int k, double slope,
                       std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(in_ch) * k * k;
  const double bound = std::sqrt(6.0 / ((1.0 + slope * slope) * fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> w(static_cast<size_t>(out_ch) * in_ch * k * k);
  for (auto& v : w) v = static_cast<T>(dist(rng));
  return {Tensor<T>::from_vector({out_ch, in_ch, k, k}, std::move(w), true),
          Tensor<T>::zeros({out_ch}, true)};
}

}  // namespace

template <typename T>
PyramidWeights<T> init_pyramid(const PyramidConfig& config,
                               std::mt19937_64& rng) {
  config.validate();
  PyramidWeights<T> weights;
  int in_ch = 3;
  for (int c : config.channels) {
    PyramidLevelWeights<T> level;
    level.conv1 = he_conv<T>(c, in_ch, 3, config.slope, rng);
    level.conv2 = he_conv<T>(c, c, 3, config.slope, rng);
    weights.levels.push_back(std::move(level));
    in_ch = c;
  }
  return weights;
}

template <typename T>
std::vector<Tensor<T>> extract(const Tensor<T>& frames,
                               const PyramidWeights<T>& weights,
                               const PyramidConfig& config) {
  if (frames.rank() != 4 || frames.dim(1) != 3) {
    throw ShapeError("extract: frames must be [B,3,H,W], got " +
                     shape_str(frames.shape()));
  }
  if (static_cast<int>(weights.levels.size()) != config.levels()) {
    throw ConfigError("extract: weights have " +
                      std::to_string(weights.levels.size()) +
                      " levels, config has " +
                      std::to_string(config.levels()));
  }
  const int64_t min_extent = config.min_extent();
  if (frames.dim(2) < min_extent || frames.dim(3) < min_extent) {
    throw ShapeError("extract: frames " + shape_str(frames.shape()) +
                     " smaller than " + std::to_string(min_extent) + "x" +
                     std::to_string(min_extent));
  }
  const T slope = static_cast<T>(config.slope);
  std::vector<Tensor<T>> out;
  Tensor<T> x = frames;
  for (const auto& level : weights.levels) {
    x = ops::leaky_relu(
        ops::conv2d(x, level.conv1.weight, level.conv1.bias, 1, 1), slope);
    x = ops::leaky_relu(
        ops::conv2d(x, level.conv2.weight, level.conv2.bias, 2, 1), slope);
    out.push_back(x);
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> concat_frames(
    const std::vector<std::vector<Tensor<T>>>& per_frame) {
  if (per_frame.empty()) throw ShapeError("concat_frames: no frames");
  const size_t levels = per_frame.front().size();
  for (size_t n = 1; n < per_frame.size(); ++n) {
    if (per_frame[n].size() != levels) {
      throw ShapeError("concat_frames: frame " + std::to_string(n) + " has " +
                       std::to_string(per_frame[n].size()) + " levels");
    }
    for (size_t l = 0; l < levels; ++l) {
      if (per_frame[n][l].shape() != per_frame[0][l].shape()) {
        throw ShapeError("concat_frames: frame " + std::to_string(n) +
                         " level " + std::to_string(l) + " has shape " +
                         shape_str(per_frame[n][l].shape()) + ", expected " +
                         shape_str(per_frame[0][l].shape()));
      }
    }
  }
  std::vector<Tensor<T>> out;
  for (size_t l = 0; l < levels; ++l) {
    if (per_frame.size() == 1) {
      out.push_back(per_frame[0][l]);
      continue;
    }
    std::vector<Tensor<T>> parts;
    for (const auto& frame : per_frame) parts.push_back(frame[l]);
    out.push_back(ops::concat(parts, 1));
  }
  return out;
}

template <typename T>
Tensor<T> fold_frames(const Tensor<T>& level, int64_t frames) {
  if (level.rank() != 4 || frames < 1 || level.dim(0) % frames != 0) {
    throw ShapeError("fold_frames: batch of " + shape_str(level.shape()) +
                     " is not a multiple of " + std::to_string(frames) +
                     " frames");
  }
  return ops::reshape(level, {level.dim(0) / frames, frames * level.dim(1),
                              level.dim(2), level.dim(3)});
}

#define VFIQA_INSTANTIATE(T)                                                 \
  template PyramidWeights<T> init_pyramid<T>(const PyramidConfig&,           \
                                             std::mt19937_64&);              \
  template std::vector<Tensor<T>> extract(                                   \
      const Tensor<T>&, const PyramidWeights<T>&, const PyramidConfig&);     \
  template std::vector<Tensor<T>> concat_frames(                             \
      const std::vector<std::vector<Tensor<T>>>&);                           \
  template Tensor<T> fold_frames(const Tensor<T>&, int64_t);

VFIQA_INSTANTIATE(float)
VFIQA_INSTANTIATE(double)

#undef VFIQA_INSTANTIATE

}  // namespace vfiqa
