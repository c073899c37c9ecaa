#include "pd/nn/rmsprop.hpp"

#include <cmath>
#include <stdexcept>

namespace pd::nn {

void rmsprop_step(std::span<double> params, std::span<const double> grads, RmsPropState& state) {
  if (params.size() != grads.size() || params.size() != state.mean_square.size()) {
    throw std::invalid_argument("rmsprop_step: length mismatch between params, grads and state");
  }
  const auto& cfg = state.config;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& ms = state.mean_square[i];
    ms = cfg.decay * ms + (1.0 - cfg.decay) * g * g;
    params[i] -= cfg.learning_rate * g / std::sqrt(ms + cfg.epsilon);
  }
}

}  // namespace pd::nn
