#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pd::nn {

struct ConvLayer {
  int filters = 0;
  int kernel = 0;
  int stride = 1;

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

enum class OutputActivation : std::uint32_t { kLinear = 0, kRelu = 1 };

// Layered feed-forward architecture: valid (unpadded) convolutions, then
// dense layers, then the output layer. A rectifier sits between every two
// consecutive layers; the output is linear unless a trunk needs it rectified.
struct NetworkSpec {
  int input_channels = 1;
  int input_height = 1;
  int input_width = 1;
  std::vector<ConvLayer> conv_layers;
  std::vector<int> dense_layers;
  int output_units = 1;
  OutputActivation output_activation = OutputActivation::kLinear;

  // Throws std::invalid_argument on non-positive counts, stride > kernel, or
  // a non-positive spatial extent after some conv layer.
  void validate() const;

  std::size_t input_size() const {
    return static_cast<std::size_t>(input_channels) * input_height * input_width;
  }

  std::string describe() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// Geometry of one parameterized layer, derived from a NetworkSpec.
struct LayerInfo {
  enum class Kind { kConv, kDense } kind;
  int in_channels, in_height, in_width;  // dense: in_channels = fan-in, h = w = 1
  int out_channels, out_height, out_width;
  int kernel, stride;
  bool relu;                  // rectifier applied to this layer's output
  std::size_t weight_offset;  // into the flat parameter vector
  std::size_t bias_offset;

  std::size_t fan_in() const {
    return kind == Kind::kConv ? static_cast<std::size_t>(in_channels) * kernel * kernel
                               : static_cast<std::size_t>(in_channels);
  }
  std::size_t weight_count() const { return fan_in() * out_channels; }
  std::size_t in_size() const { return static_cast<std::size_t>(in_channels) * in_height * in_width; }
  std::size_t out_size() const {
    return static_cast<std::size_t>(out_channels) * out_height * out_width;
  }
};

// Canonical parameter layout: layer by layer in order (convs, denses,
// output); within a layer the weights come first, then the biases.
// Conv weights are ordered [filter][in_channel][row][col]; dense weights
// are ordered [out][in].
std::vector<LayerInfo> layer_layout(const NetworkSpec& spec);

// Exact trainable parameter count: sum over layers of fan_in * fan_out + fan_out.
std::size_t count_parameters(const NetworkSpec& spec);

// Flat float64 parameters of one network, in canonical layout.
struct ParameterStore {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  friend bool operator==(const ParameterStore&, const ParameterStore&) = default;
};

// Weights uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
ParameterStore init_parameters(const NetworkSpec& spec, std::uint64_t seed);

ParameterStore zero_parameters(const NetworkSpec& spec);

// Intermediate values of one (possibly batched) forward pass, kept for
// backpropagation. Every buffer is sample-major.
struct ForwardTrace {
  int batch = 1;
  std::vector<double> input;
  // Per layer: im2col patches (conv only), pre-activation, post-activation.
  std::vector<std::vector<double>> patches;
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> post;

  // All outputs, batch x output_units.
  std::span<const double> output() const { return post.back(); }
  std::span<const double> output(int sample) const {
    const std::size_t n = post.back().size() / batch;
    return std::span<const double>(post.back()).subspan(sample * n, n);
  }
};

std::vector<double> forward(const NetworkSpec& spec, const ParameterStore& params,
                            std::span<const double> input);

void forward_traced(const NetworkSpec& spec, const ParameterStore& params,
                    std::span<const double> input, ForwardTrace& trace);

// inputs holds batch samples back to back; one GEMM per layer covers the batch.
void forward_batch_traced(const NetworkSpec& spec, const ParameterStore& params,
                          std::span<const double> inputs, int batch, ForwardTrace& trace);

std::vector<double> forward_batch(const NetworkSpec& spec, const ParameterStore& params,
                                  std::span<const double> inputs, int batch);

// Accumulates d(loss)/d(params) into param_grad given d(loss)/d(output) for
// every sample of the trace. When input_grad is non-empty it receives
// d(loss)/d(input), batch x input_size.
void backward_traced(const NetworkSpec& spec, const ParameterStore& params,
                     const ForwardTrace& trace, std::span<const double> output_grad,
                     std::span<double> param_grad, std::span<double> input_grad = {});

// Gradient of the scalar loss with respect to every parameter, canonical layout.
std::vector<double> backward(const NetworkSpec& spec, const ParameterStore& params,
                             std::span<const double> input, std::span<const double> output_grad);

// Post-activation values of a single layer (index into layer_layout).
std::vector<double> layer_activation(const NetworkSpec& spec, const ParameterStore& params,
                                     std::span<const double> input, std::size_t layer_index);

}  // namespace pd::nn
