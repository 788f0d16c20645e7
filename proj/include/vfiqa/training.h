#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "vfiqa/clip.h"
#include "vfiqa/dataset.h"
#include "vfiqa/metric_model.h"

namespace vfiqa {

struct TrainProgress {
  int64_t step = 0;   // optimizer steps taken so far
  int epoch = 0;      // 0-based
  double batch_loss = 0.0;
};

struct TrainConfig {
  double lr = 1e-4;
  int batch = 8;
  int epochs = 20;
  double scale_min = 0.5;
  double scale_max = 1.0;
  uint64_t seed = 0;
  double weight_decay = 0.0;
  int64_t max_steps = 0;  // 0: no limit
  // Called after every optimizer step; returning true stops training.
  std::function<bool(const TrainProgress&)> on_step;
  std::ostream* log = nullptr;

  void validate() const;
};

struct TrainExample {
  std::string id;
  VideoClip a, b, ref;
  double h = 0.5;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean per-triplet BCE
  int64_t steps = 0;
  bool stopped_early = false;
};

// Largest multiple of `quantum` not above `extent * scale`, at least quantum.
int64_t snap_extent(int64_t extent, double scale, int64_t quantum);

// Siamese BCE of one triplet; on the tape when gradients are enabled.
TensorF triplet_loss(const MetricModel& model, const VideoClip& a,
                     const VideoClip& b, const VideoClip& ref, double h);

// Updates the model in place. Deterministic for a given seed.
TrainReport train(MetricModel& model, std::span<const TrainExample> examples,
                  const TrainConfig& config);

// Labeled triplets whose clips load; others are skipped with a warning on
// `log`. Clips longer than `frames` are cut to their first `frames` frames.
std::vector<TrainExample> load_examples(std::span<const Triplet> triplets,
                                        int frames, std::ostream* log);

}  // namespace vfiqa
