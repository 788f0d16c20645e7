#include "vfiqa/optim.h"

#include <cmath>
#include <stdexcept>
#include <string>

namespace vfiqa {

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, AdamWConfig config)
    : params_(std::move(params)) {
  if (config.lr < 0 || config.eps < 0 || config.weight_decay < 0 ||
      config.beta1 < 0 || config.beta1 >= 1 || config.beta2 < 0 ||
      config.beta2 >= 1) {
    throw ConfigError("AdamW: invalid hyperparameters");
  }
  state_.config = config;
  for (const auto& p : params_) {
    state_.first_moment.emplace_back(p.size(), T(0));
    state_.second_moment.emplace_back(p.size(), T(0));
  }
}

template <typename T>
void AdamW<T>::step() {
  for (size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      throw std::logic_error("AdamW: parameter " + std::to_string(i) + " " +
                             shape_str(params_[i].shape()) + " has no grad");
    }
  }
  const AdamWConfig& c = state_.config;
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  const double decay = 1.0 - c.lr * c.weight_decay;
  for (size_t i = 0; i < params_.size(); ++i) {
    auto p = params_[i].mutable_data();
    auto g = params_[i].mutable_grad();
    auto& m = state_.first_moment[i];
    auto& v = state_.second_moment[i];
    for (size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      const double vj = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      double pj = p[j] * decay;
      pj -= c.lr * (mj / bc1) / (std::sqrt(vj / bc2) + c.eps);
      p[j] = static_cast<T>(pj);
    }
    params_[i].zero_grad();
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace vfiqa
