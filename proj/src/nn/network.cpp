#include "pd/nn/network.hpp"

#include <Eigen/Core>

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "pd/rng.hpp"

namespace pd::nn {

namespace {

// Left-to-right sum. Eigen's vectorized reductions peel according to the
// runtime address, which makes results depend on where a buffer lands.
double sequential_sum(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
using Vector = Eigen::Matrix<double, Eigen::Dynamic, 1>;

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("NetworkSpec: " + what);
}

// Unrolls receptive fields into a (fan_in x positions) column-major block.
void im2col(const LayerInfo& l, const double* x, double* patches) {
  const int k = l.kernel;
  const std::size_t fan_in = l.fan_in();
  for (int oy = 0; oy < l.out_height; ++oy) {
    for (int ox = 0; ox < l.out_width; ++ox) {
      double* col = patches + (static_cast<std::size_t>(oy) * l.out_width + ox) * fan_in;
      for (int c = 0; c < l.in_channels; ++c) {
        const double* plane = x + static_cast<std::size_t>(c) * l.in_height * l.in_width;
        for (int ky = 0; ky < k; ++ky) {
          const double* row = plane + static_cast<std::size_t>(oy * l.stride + ky) * l.in_width +
                              ox * l.stride;
          for (int kx = 0; kx < k; ++kx) *col++ = row[kx];
        }
      }
    }
  }
}

void col2im_add(const LayerInfo& l, const double* patches, double* dx) {
  const int k = l.kernel;
  const std::size_t fan_in = l.fan_in();
  for (int oy = 0; oy < l.out_height; ++oy) {
    for (int ox = 0; ox < l.out_width; ++ox) {
      const double* col = patches + (static_cast<std::size_t>(oy) * l.out_width + ox) * fan_in;
      for (int c = 0; c < l.in_channels; ++c) {
        double* plane = dx + static_cast<std::size_t>(c) * l.in_height * l.in_width;
        for (int ky = 0; ky < k; ++ky) {
          double* row = plane + static_cast<std::size_t>(oy * l.stride + ky) * l.in_width +
                        ox * l.stride;
          for (int kx = 0; kx < k; ++kx) row[kx] += *col++;
        }
      }
    }
  }
}

// Per-thread scratch reused across calls; fresh multi-megabyte buffers on
// every minibatch cost more in page faults than the GEMMs themselves.
struct Scratch {
  std::vector<double> a, b, c, d;
  ForwardTrace trace;
};

Scratch& scratch() {
  thread_local Scratch s;
  return s;
}

void check_params(const NetworkSpec& spec, const ParameterStore& params) {
  if (params.size() != count_parameters(spec)) {
    throw std::invalid_argument("parameter count " + std::to_string(params.size()) +
                                " does not match spec (" +
                                std::to_string(count_parameters(spec)) + ")");
  }
}

void check_input(const NetworkSpec& spec, std::span<const double> input) {
  if (input.size() != spec.input_size()) {
    throw std::invalid_argument("input size " + std::to_string(input.size()) +
                                " does not match spec input " + std::to_string(spec.input_size()));
  }
}

}  // namespace

void NetworkSpec::validate() const {
  require(input_channels > 0 && input_height > 0 && input_width > 0,
          "input dimensions must be positive");
  int h = input_height;
  int w = input_width;
  for (std::size_t i = 0; i < conv_layers.size(); ++i) {
    const auto& c = conv_layers[i];
    const std::string tag = "conv layer " + std::to_string(i);
    require(c.filters > 0 && c.kernel > 0 && c.stride > 0, tag + " counts must be positive");
    require(c.stride <= c.kernel, tag + " stride exceeds kernel");
    require(c.kernel <= h && c.kernel <= w, tag + " leaves a non-positive spatial extent");
    h = (h - c.kernel) / c.stride + 1;
    w = (w - c.kernel) / c.stride + 1;
  }
  for (std::size_t i = 0; i < dense_layers.size(); ++i) {
    require(dense_layers[i] > 0, "dense layer " + std::to_string(i) + " units must be positive");
  }
  require(output_units > 0, "output units must be positive");
}

std::string NetworkSpec::describe() const {
  std::ostringstream os;
  os << input_channels << "x" << input_height << "x" << input_width;
  for (const auto& c : conv_layers) os << " conv" << c.filters << "@" << c.kernel << "/" << c.stride;
  for (int d : dense_layers) os << " fc" << d;
  os << " out" << output_units;
  if (output_activation == OutputActivation::kRelu) os << "+relu";
  return os.str();
}

std::vector<LayerInfo> layer_layout(const NetworkSpec& spec) {
  spec.validate();
  std::vector<LayerInfo> layers;
  int c = spec.input_channels;
  int h = spec.input_height;
  int w = spec.input_width;
  std::size_t offset = 0;
  for (const auto& conv : spec.conv_layers) {
    LayerInfo l{LayerInfo::Kind::kConv, c, h, w, conv.filters,
                (h - conv.kernel) / conv.stride + 1, (w - conv.kernel) / conv.stride + 1,
                conv.kernel, conv.stride, true, 0, 0};
    l.weight_offset = offset;
    l.bias_offset = offset + l.weight_count();
    offset = l.bias_offset + l.out_channels;
    layers.push_back(l);
    c = l.out_channels;
    h = l.out_height;
    w = l.out_width;
  }
  int fan_in = c * h * w;
  auto add_dense = [&](int units, bool relu) {
    LayerInfo l{LayerInfo::Kind::kDense, fan_in, 1, 1, units, 1, 1, 1, 1, relu, 0, 0};
    l.weight_offset = offset;
    l.bias_offset = offset + l.weight_count();
    offset = l.bias_offset + units;
    layers.push_back(l);
    fan_in = units;
  };
  for (int units : spec.dense_layers) add_dense(units, true);
  add_dense(spec.output_units, spec.output_activation == OutputActivation::kRelu);
  return layers;
}

std::size_t count_parameters(const NetworkSpec& spec) {
  std::size_t total = 0;
  for (const auto& l : layer_layout(spec)) total += l.weight_count() + l.out_channels;
  return total;
}

ParameterStore init_parameters(const NetworkSpec& spec, std::uint64_t seed) {
  const auto layers = layer_layout(spec);
  ParameterStore store{std::vector<double>(count_parameters(spec), 0.0)};
  Rng rng(derive_seed(seed, "init_parameters"));
  for (const auto& l : layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.fan_in()));
    for (std::size_t i = 0; i < l.weight_count(); ++i) {
      double u;
      do {
        u = rng.uniform();
      } while (u == 0.0);
      store.values[l.weight_offset + i] = (2.0 * u - 1.0) * bound;
    }
  }
  return store;
}

ParameterStore zero_parameters(const NetworkSpec& spec) {
  return ParameterStore{std::vector<double>(count_parameters(spec), 0.0)};
}

void forward_batch_traced(const NetworkSpec& spec, const ParameterStore& params,
                          std::span<const double> inputs, int batch, ForwardTrace& trace) {
  if (batch < 1) throw std::invalid_argument("forward: batch must be positive");
  if (inputs.size() != spec.input_size() * static_cast<std::size_t>(batch)) {
    throw std::invalid_argument("input size " + std::to_string(inputs.size()) +
                                " does not match spec input " +
                                std::to_string(spec.input_size()) + " x batch " +
                                std::to_string(batch));
  }
  check_params(spec, params);
  const auto layers = layer_layout(spec);
  const auto b_count = static_cast<std::size_t>(batch);
  trace.batch = batch;
  trace.input.assign(inputs.begin(), inputs.end());
  trace.patches.resize(layers.size());
  trace.pre.resize(layers.size());
  trace.post.resize(layers.size());

  // Activations are stored sample-major: [sample][channel][row][col].
  const double* x = trace.input.data();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerInfo& l = layers[i];
    auto& pre = trace.pre[i];
    pre.resize(l.out_size() * b_count);
    const double* weights = params.values.data() + l.weight_offset;
    const double* bias = params.values.data() + l.bias_offset;
    if (l.kind == LayerInfo::Kind::kConv) {
      const std::size_t positions = static_cast<std::size_t>(l.out_height) * l.out_width;
      auto& patches = trace.patches[i];
      patches.resize(l.fan_in() * positions * b_count);
      for (std::size_t b = 0; b < b_count; ++b) {
        im2col(l, x + b * l.in_size(), patches.data() + b * l.fan_in() * positions);
      }
      Eigen::Map<const RowMatrix> w(weights, l.out_channels, l.fan_in());
      Eigen::Map<const ColMatrix> p(patches.data(), l.fan_in(), positions * b_count);
      // z is [channel][sample * positions]; reorder to sample-major.
      auto& zbuf = scratch().a;
      zbuf.resize(l.out_channels * positions * b_count);
      Eigen::Map<RowMatrix> z(zbuf.data(), l.out_channels, positions * b_count);
      z.noalias() = w * p;
      z.colwise() += Eigen::Map<const Vector>(bias, l.out_channels);
      for (std::size_t b = 0; b < b_count; ++b) {
        for (int c = 0; c < l.out_channels; ++c) {
          const double* src = z.data() + static_cast<std::size_t>(c) * positions * b_count +
                              b * positions;
          std::copy(src, src + positions,
                    pre.data() + (b * l.out_channels + c) * positions);
        }
      }
    } else {
      trace.patches[i].clear();
      Eigen::Map<const RowMatrix> w(weights, l.out_channels, l.in_channels);
      Eigen::Map<const ColMatrix> in(x, l.in_channels, batch);
      Eigen::Map<ColMatrix> z(pre.data(), l.out_channels, batch);
      z.noalias() = w * in;
      z.colwise() += Eigen::Map<const Vector>(bias, l.out_channels);
    }
    auto& post = trace.post[i];
    post = pre;
    if (l.relu) {
      for (double& v : post) v = v > 0.0 ? v : 0.0;
    }
    x = post.data();
  }
}

void forward_traced(const NetworkSpec& spec, const ParameterStore& params,
                    std::span<const double> input, ForwardTrace& trace) {
  forward_batch_traced(spec, params, input, 1, trace);
}

std::vector<double> forward(const NetworkSpec& spec, const ParameterStore& params,
                            std::span<const double> input) {
  check_input(spec, input);
  ForwardTrace& trace = scratch().trace;
  forward_traced(spec, params, input, trace);
  return trace.post.back();
}

std::vector<double> forward_batch(const NetworkSpec& spec, const ParameterStore& params,
                                  std::span<const double> inputs, int batch) {
  ForwardTrace& trace = scratch().trace;
  forward_batch_traced(spec, params, inputs, batch, trace);
  return trace.post.back();
}

void backward_traced(const NetworkSpec& spec, const ParameterStore& params,
                     const ForwardTrace& trace, std::span<const double> output_grad,
                     std::span<double> param_grad, std::span<double> input_grad) {
  check_params(spec, params);
  const auto layers = layer_layout(spec);
  if (trace.post.size() != layers.size()) {
    throw std::invalid_argument("backward: trace does not belong to this spec");
  }
  const auto b_count = static_cast<std::size_t>(trace.batch);
  if (output_grad.size() != static_cast<std::size_t>(spec.output_units) * b_count) {
    throw std::invalid_argument("backward: output gradient has " +
                                std::to_string(output_grad.size()) + " entries, expected " +
                                std::to_string(spec.output_units * b_count));
  }
  if (param_grad.size() != params.size()) {
    throw std::invalid_argument("backward: parameter gradient buffer has wrong length");
  }
  if (!input_grad.empty() && input_grad.size() != spec.input_size() * b_count) {
    throw std::invalid_argument("backward: input gradient buffer has wrong length");
  }

  auto& upstream = scratch().a;
  auto& downstream = scratch().b;
  upstream.assign(output_grad.begin(), output_grad.end());
  for (std::size_t idx = layers.size(); idx-- > 0;) {
    const LayerInfo& l = layers[idx];
    const auto& pre = trace.pre[idx];
    if (l.relu) {
      for (std::size_t j = 0; j < upstream.size(); ++j) {
        if (!(pre[j] > 0.0)) upstream[j] = 0.0;
      }
    }
    const double* layer_in = idx == 0 ? trace.input.data() : trace.post[idx - 1].data();
    const double* weights = params.values.data() + l.weight_offset;
    double* dw_ptr = param_grad.data() + l.weight_offset;
    double* db_ptr = param_grad.data() + l.bias_offset;
    const bool need_input_grad = idx > 0 || !input_grad.empty();

    if (l.kind == LayerInfo::Kind::kConv) {
      const std::size_t positions = static_cast<std::size_t>(l.out_height) * l.out_width;
      auto& dz_buf = scratch().c;
      dz_buf.resize(l.out_channels * positions * b_count);
      Eigen::Map<RowMatrix> dz(dz_buf.data(), l.out_channels, positions * b_count);
      for (std::size_t b = 0; b < b_count; ++b) {
        for (int c = 0; c < l.out_channels; ++c) {
          const double* src = upstream.data() + (b * l.out_channels + c) * positions;
          std::copy(src, src + positions,
                    dz.data() + static_cast<std::size_t>(c) * positions * b_count + b * positions);
        }
      }
      Eigen::Map<const ColMatrix> p(trace.patches[idx].data(), l.fan_in(), positions * b_count);
      Eigen::Map<RowMatrix> dw(dw_ptr, l.out_channels, l.fan_in());
      dw.noalias() += dz * p.transpose();
      for (int c = 0; c < l.out_channels; ++c) {
        const double* row = dz_buf.data() + static_cast<std::size_t>(c) * positions * b_count;
        db_ptr[c] += sequential_sum(row, positions * b_count);
      }
      if (need_input_grad) {
        Eigen::Map<const RowMatrix> w(weights, l.out_channels, l.fan_in());
        auto& dp_buf = scratch().d;
        dp_buf.resize(l.fan_in() * positions * b_count);
        Eigen::Map<ColMatrix> dpatches(dp_buf.data(), l.fan_in(), positions * b_count);
        dpatches.noalias() = w.transpose() * dz;
        downstream.assign(l.in_size() * b_count, 0.0);
        for (std::size_t b = 0; b < b_count; ++b) {
          col2im_add(l, dpatches.data() + b * l.fan_in() * positions,
                     downstream.data() + b * l.in_size());
        }
      }
    } else {
      Eigen::Map<const ColMatrix> dz(upstream.data(), l.out_channels, trace.batch);
      Eigen::Map<const ColMatrix> in(layer_in, l.in_channels, trace.batch);
      Eigen::Map<RowMatrix> dw(dw_ptr, l.out_channels, l.in_channels);
      dw.noalias() += dz * in.transpose();
      for (std::size_t b = 0; b < b_count; ++b) {
        const double* col = upstream.data() + b * l.out_channels;
        for (int c = 0; c < l.out_channels; ++c) db_ptr[c] += col[c];
      }
      if (need_input_grad) {
        Eigen::Map<const RowMatrix> w(weights, l.out_channels, l.in_channels);
        downstream.resize(l.in_size() * b_count);
        Eigen::Map<ColMatrix>(downstream.data(), l.in_channels, trace.batch).noalias() =
            w.transpose() * dz;
      }
    }
    if (!need_input_grad) break;
    upstream.swap(downstream);
  }
  if (!input_grad.empty()) {
    for (std::size_t j = 0; j < input_grad.size(); ++j) input_grad[j] = upstream[j];
  }
}

std::vector<double> backward(const NetworkSpec& spec, const ParameterStore& params,
                             std::span<const double> input, std::span<const double> output_grad) {
  check_input(spec, input);
  ForwardTrace trace;
  forward_traced(spec, params, input, trace);
  std::vector<double> grad(params.size(), 0.0);
  backward_traced(spec, params, trace, output_grad, grad);
  return grad;
}

std::vector<double> layer_activation(const NetworkSpec& spec, const ParameterStore& params,
                                     std::span<const double> input, std::size_t layer_index) {
  ForwardTrace trace;
  forward_traced(spec, params, input, trace);
  if (layer_index >= trace.post.size()) {
    throw std::out_of_range("layer_activation: layer index out of range");
  }
  return trace.post[layer_index];
}

}  // namespace pd::nn
