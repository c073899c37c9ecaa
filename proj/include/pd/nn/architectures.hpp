#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pd/nn/network.hpp"

namespace pd::nn {

// Hidden layers in text form, e.g. "conv16@3/1 conv32@4/2 fc128".
// Input shape and output layer come from elsewhere.
struct HiddenLayers {
  std::vector<ConvLayer> conv;
  std::vector<int> dense;

  friend bool operator==(const HiddenLayers&, const HiddenLayers&) = default;
};

// Throws std::invalid_argument on malformed tokens or convs after a dense layer.
HiddenLayers parse_hidden_layers(std::string_view text);
std::string format_hidden_layers(const HiddenLayers& layers);
HiddenLayers hidden_layers_of(const NetworkSpec& spec);
NetworkSpec with_hidden_layers(NetworkSpec spec, const HiddenLayers& layers);

struct NamedSpec {
  std::string name;
  NetworkSpec spec;
};

// 4x84x84 input, 18 actions, conv kernels 8/4/3 with strides 4/2/1: the
// DQN teacher and the three compressed students.
std::vector<NamedSpec> atari_reference_specs();

// Shared trunk (convs plus one rectified dense layer) with one head per task:
// a dense layer of head_hidden units, then that task's action count.
struct MultiTaskShape {
  NetworkSpec trunk;  // output_units is the shared dense width
  int head_hidden = 0;
  std::vector<int> action_counts;

  std::size_t parameter_count() const;
};

// The 3-game and 10-game Atari multi-task shapes. Only the action-count
// totals (12 and 85) are pinned by the published parameter totals; the
// per-game split is a placeholder.
std::vector<std::pair<std::string, MultiTaskShape>> atari_multitask_shapes();

}  // namespace pd::nn
