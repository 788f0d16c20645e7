#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vfiqa/clip.h"
#include "vfiqa/pyramid.h"
#include "vfiqa/st_module.h"

namespace vfiqa {

struct ModelConfig {
  // Frames per clip. The embedding width of every level depends on it.
  int frames = 12;
  PyramidConfig pyramid;
  STConfig st;

  void validate() const;
};

inline constexpr uint16_t kWeightsFormatVersion = 1;

using NamedTensor = std::pair<std::string, TensorF>;

// Pyramid extractor plus one ST head per level. Weights are shared between
// all frames and between the two branches of a siamese pair.
class MetricModel {
 public:
  MetricModel(ModelConfig config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const PyramidWeights<float>& pyramid() const { return pyramid_; }
  const std::vector<STLevelWeights<float>>& heads() const { return heads_; }

  // Stable order and names; handles alias the model's storage.
  std::vector<NamedTensor> named_parameters() const;
  std::vector<TensorF> parameters() const;

  // Distance of every candidate to `reference`, as a [K] tensor that is on
  // the tape when gradients are enabled. Pyramid features of the reference
  // are computed once.
  DistanceOutput<float> distances(std::span<const VideoClip> candidates,
                                  const VideoClip& reference) const;

 private:
  ModelConfig config_;
  PyramidWeights<float> pyramid_;
  std::vector<STLevelWeights<float>> heads_;
};

// d(V, V_R) with gradients disabled.
double score(const VideoClip& clip, const VideoClip& reference,
             const MetricModel& model);

// sigmoid(d_a - d_b): probability that B is the better (closer) candidate.
double preference_prob(double d_a, double d_b);

inline constexpr double kProbClamp = 1e-7;

// Binary cross entropy with p clamped to [1e-7, 1 - 1e-7]. Throws
// std::domain_error when h is outside [0, 1].
double bce_loss(double p, double h);

// Differentiable siamese loss from rank-0 distances.
TensorF siamese_loss(const TensorF& d_a, const TensorF& d_b, double h);

void save_model(const MetricModel& model, const std::filesystem::path& path);
MetricModel load_model(const std::filesystem::path& path);

}  // namespace vfiqa
