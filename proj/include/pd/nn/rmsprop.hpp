#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace pd::nn {

struct RmsPropConfig {
  double learning_rate = 2.5e-4;
  double decay = 0.95;
  double epsilon = 1e-6;

  friend bool operator==(const RmsPropConfig&, const RmsPropConfig&) = default;
};

struct RmsPropState {
  std::vector<double> mean_square;
  RmsPropConfig config;

  RmsPropState() = default;
  RmsPropState(std::size_t n, RmsPropConfig cfg) : mean_square(n, 0.0), config(cfg) {}
};

// mean_square <- decay * mean_square + (1 - decay) * grad^2
// params      <- params - lr * grad / sqrt(mean_square + epsilon)
void rmsprop_step(std::span<double> params, std::span<const double> grads, RmsPropState& state);

}  // namespace pd::nn
