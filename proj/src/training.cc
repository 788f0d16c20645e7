#include "vfiqa/training.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "vfiqa/ops.h"
#include "vfiqa/optim.h"

namespace vfiqa {

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
  if (batch < 1) throw ConfigError("train: batch must be >= 1");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0)) {
    throw ConfigError("train: need 0 < scale_min <= scale_max <= 1");
  }
  if (max_steps < 0) throw ConfigError("train: max_steps must be >= 0");
}

int64_t snap_extent(int64_t extent, double scale, int64_t quantum) {
  const auto target = static_cast<int64_t>(std::floor(extent * scale));
  return std::max(quantum, target / quantum * quantum);
}

TensorF triplet_loss(const MetricModel& model, const VideoClip& a,
                     const VideoClip& b, const VideoClip& ref, double h) {
  const VideoClip pair[] = {a, b};
  DistanceOutput<float> d = model.distances(pair, ref);
  TensorF loss = siamese_loss(ops::slice(d.d, 0, 0, 1),
                              ops::slice(d.d, 0, 1, 1), h);
  return ops::sum(loss);
}

TrainReport train(MetricModel& model, std::span<const TrainExample> examples,
                  const TrainConfig& config) {
  config.validate();
  if (examples.empty()) throw std::invalid_argument("train: empty epoch");
  const int64_t quantum = model.config().pyramid.min_extent();

  AdamWConfig opt_cfg;
  opt_cfg.lr = config.lr;
  opt_cfg.weight_decay = config.weight_decay;
  AdamW<float> opt(model.parameters(), opt_cfg);

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> scale_dist(config.scale_min,
                                                    config.scale_max);
  std::vector<size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);

  TrainReport report;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    size_t seen = 0;
    for (size_t start = 0; start < order.size(); start += config.batch) {
      const size_t end = std::min(order.size(), start + config.batch);
      const float inv = 1.0f / static_cast<float>(end - start);
      double batch_total = 0.0;
      for (size_t i = start; i < end; ++i) {
        const TrainExample& ex = examples[order[i]];
        const double s = scale_dist(rng);
        const int64_t h = snap_extent(ex.ref.height(), s, quantum);
        const int64_t w = snap_extent(ex.ref.width(), s, quantum);
        TensorF loss;
        if (h == ex.ref.height() && w == ex.ref.width()) {
          loss = triplet_loss(model, ex.a, ex.b, ex.ref, ex.h);
        } else {
          loss = triplet_loss(model, resize_clip(ex.a, h, w),
                              resize_clip(ex.b, h, w),
                              resize_clip(ex.ref, h, w), ex.h);
        }
        batch_total += loss.item();
        backward(ops::scale(loss, inv));
      }
      opt.step();
      ++report.steps;
      epoch_total += batch_total;
      seen += end - start;

      TrainProgress progress{report.steps, epoch,
                             batch_total / static_cast<double>(end - start)};
      bool stop = config.max_steps > 0 && report.steps >= config.max_steps;
      if (config.on_step && config.on_step(progress)) stop = true;
      if (stop) {
        report.epoch_loss.push_back(epoch_total / static_cast<double>(seen));
        report.stopped_early = true;
        if (config.log) {
          *config.log << "epoch " << epoch << " loss "
                      << report.epoch_loss.back() << " (stopped at step "
                      << report.steps << ")\n";
        }
        return report;
      }
    }
    report.epoch_loss.push_back(epoch_total / static_cast<double>(seen));
    if (config.log) {
      *config.log << "epoch " << epoch << " loss " << report.epoch_loss.back()
                  << "\n";
    }
  }
  return report;
}

std::vector<TrainExample> load_examples(std::span<const Triplet> triplets,
                                        int frames, std::ostream* log) {
  std::vector<TrainExample> out;
  for (const auto& t : triplets) {
    if (!t.h) {
      if (log) *log << "warning: skipping unlabeled triplet '" << t.id << "'\n";
      continue;
    }
    try {
      TrainExample ex{t.id, load_clip(t.a), load_clip(t.b), load_clip(t.ref),
                      *t.h};
      for (VideoClip* c : {&ex.a, &ex.b, &ex.ref}) {
        if (c->frame_count() < frames) {
          throw ClipIoError("clip " + c->id + " has " +
                            std::to_string(c->frame_count()) +
                            " frames, need " + std::to_string(frames));
        }
        if (c->frame_count() > frames) *c = c->subclip(0, frames);
      }
      if (!ex.a.same_geometry(ex.ref) || !ex.b.same_geometry(ex.ref)) {
        throw ClipIoError("clip shapes differ");
      }
      out.push_back(std::move(ex));
    } catch (const std::exception& e) {
      if (log) {
        *log << "warning: skipping triplet '" << t.id << "': " << e.what()
             << "\n";
      }
    }
  }
  return out;
}

}  // namespace vfiqa
