#pragma once

#include <cstdint>
#include <vector>

#include "vfiqa/tensor.h"

namespace vfiqa {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <typename T>
struct OptimizerState {
  AdamWConfig config;
  int64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

// AdamW with decoupled weight decay and bias correction. Decay is applied to
// the parameter before the adaptive step, as in the reference formulation.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, AdamWConfig config = {});

  // Throws std::logic_error if any registered parameter has no gradient.
  // Gradients are zero-filled afterwards.
  void step();

  const OptimizerState<T>& state() const { return state_; }
  const std::vector<Tensor<T>>& params() const { return params_; }
  void set_lr(double lr) { state_.config.lr = lr; }

 private:
  std::vector<Tensor<T>> params_;
  OptimizerState<T> state_;
};

}  // namespace vfiqa
