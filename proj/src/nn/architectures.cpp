#include "pd/nn/architectures.hpp"

#include <charconv>
#include <sstream>
#include <stdexcept>

namespace pd::nn {

namespace {

int parse_positive(std::string_view s, std::string_view token) {
  int v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || v <= 0) {
    throw std::invalid_argument("bad layer token '" + std::string(token) + "'");
  }
  return v;
}

}  // namespace

HiddenLayers parse_hidden_layers(std::string_view text) {
  HiddenLayers out;
  std::istringstream in{std::string(text)};
  std::string token;
  while (in >> token) {
    const std::string_view t = token;
    if (t.starts_with("conv")) {
      if (!out.dense.empty()) throw std::invalid_argument("conv layer after a dense layer");
      const auto at = t.find('@');
      const auto slash = t.find('/');
      if (at == std::string_view::npos || slash == std::string_view::npos || slash < at) {
        throw std::invalid_argument("bad layer token '" + token + "'");
      }
      out.conv.push_back({parse_positive(t.substr(4, at - 4), t),
                          parse_positive(t.substr(at + 1, slash - at - 1), t),
                          parse_positive(t.substr(slash + 1), t)});
    } else if (t.starts_with("fc")) {
      out.dense.push_back(parse_positive(t.substr(2), t));
    } else {
      throw std::invalid_argument("bad layer token '" + token + "'");
    }
  }
  return out;
}

std::string format_hidden_layers(const HiddenLayers& layers) {
  std::ostringstream os;
  const char* sep = "";
  for (const auto& c : layers.conv) {
    os << sep << "conv" << c.filters << "@" << c.kernel << "/" << c.stride;
    sep = " ";
  }
  for (int d : layers.dense) {
    os << sep << "fc" << d;
    sep = " ";
  }
  return os.str();
}

HiddenLayers hidden_layers_of(const NetworkSpec& spec) {
  return {spec.conv_layers, spec.dense_layers};
}

NetworkSpec with_hidden_layers(NetworkSpec spec, const HiddenLayers& layers) {
  spec.conv_layers = layers.conv;
  spec.dense_layers = layers.dense;
  return spec;
}

std::vector<NamedSpec> atari_reference_specs() {
  auto make = [](int c1, int c2, int c3, int fc) {
    NetworkSpec s;
    s.input_channels = 4;
    s.input_height = 84;
    s.input_width = 84;
    s.conv_layers = {{c1, 8, 4}, {c2, 4, 2}, {c3, 3, 1}};
    s.dense_layers = {fc};
    s.output_units = 18;
    return s;
  };
  return {{"teacher", make(32, 64, 64, 512)},
          {"net1", make(16, 32, 32, 256)},
          {"net2", make(16, 16, 16, 128)},
          {"net3", make(16, 16, 16, 64)}};
}

std::size_t MultiTaskShape::parameter_count() const {
  NetworkSpec t = trunk;
  t.output_activation = OutputActivation::kRelu;
  std::size_t n = count_parameters(t);
  for (int a : action_counts) {
    NetworkSpec head;
    head.input_channels = trunk.output_units;
    head.dense_layers = {head_hidden};
    head.output_units = a;
    n += count_parameters(head);
  }
  return n;
}

std::vector<std::pair<std::string, MultiTaskShape>> atari_multitask_shapes() {
  auto trunk = [](int c1, int c2, int c3, int fc) {
    NetworkSpec s;
    s.input_channels = 4;
    s.input_height = 84;
    s.input_width = 84;
    s.conv_layers = {{c1, 8, 4}, {c2, 4, 2}, {c3, 3, 1}};
    s.output_units = fc;
    return s;
  };
  std::vector<int> ten(10, 8);
  ten.back() = 13;  // 9 * 8 + 13 = 85
  return {{"multi3", {trunk(32, 64, 64, 512), 128, {3, 3, 6}}},
          {"multi10", {trunk(64, 64, 64, 1500), 128, ten}}};
}

}  // namespace pd::nn
