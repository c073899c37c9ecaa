#include "pd/nn/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <stdexcept>

namespace pd::nn {

void write_container_header(ByteWriter& w, PayloadKind kind) {
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(kind));
}

void read_container_header(ByteReader& r, PayloadKind expected) {
  if (r.raw(4) != std::string_view(kCheckpointMagic, 4)) {
    throw std::runtime_error("checkpoint: bad magic (expected PDST)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
  }
  const std::uint32_t kind = r.u32();
  if (kind != static_cast<std::uint32_t>(expected)) {
    throw std::runtime_error("checkpoint: payload kind " + std::to_string(kind) + ", expected " +
                             std::to_string(static_cast<std::uint32_t>(expected)));
  }
}

void write_spec(ByteWriter& w, const NetworkSpec& spec) {
  w.u32(static_cast<std::uint32_t>(spec.input_channels));
  w.u32(static_cast<std::uint32_t>(spec.input_height));
  w.u32(static_cast<std::uint32_t>(spec.input_width));
  w.u32(static_cast<std::uint32_t>(spec.conv_layers.size()));
  for (const auto& c : spec.conv_layers) {
    w.u32(static_cast<std::uint32_t>(c.filters));
    w.u32(static_cast<std::uint32_t>(c.kernel));
    w.u32(static_cast<std::uint32_t>(c.stride));
  }
  w.u32(static_cast<std::uint32_t>(spec.dense_layers.size()));
  for (int d : spec.dense_layers) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(spec.output_units));
  w.u32(static_cast<std::uint32_t>(spec.output_activation));
}

NetworkSpec read_spec(ByteReader& r) {
  auto as_int = [](std::uint32_t v) {
    if (v > 1u << 30) throw std::runtime_error("checkpoint: implausible spec field");
    return static_cast<int>(v);
  };
  NetworkSpec spec;
  spec.input_channels = as_int(r.u32());
  spec.input_height = as_int(r.u32());
  spec.input_width = as_int(r.u32());
  spec.conv_layers.resize(as_int(r.u32()));
  for (auto& c : spec.conv_layers) {
    c.filters = as_int(r.u32());
    c.kernel = as_int(r.u32());
    c.stride = as_int(r.u32());
  }
  spec.dense_layers.resize(as_int(r.u32()));
  for (int& d : spec.dense_layers) d = as_int(r.u32());
  spec.output_units = as_int(r.u32());
  const std::uint32_t act = r.u32();
  if (act > 1) throw std::runtime_error("checkpoint: unknown output activation");
  spec.output_activation = static_cast<OutputActivation>(act);
  spec.validate();
  return spec;
}

void write_network(ByteWriter& w, const NetworkSpec& spec, const ParameterStore& params) {
  if (params.size() != count_parameters(spec)) {
    throw std::invalid_argument("checkpoint: parameter store does not match spec");
  }
  write_spec(w, spec);
  w.f64s(params.values);
}

void read_network(ByteReader& r, NetworkSpec& spec, ParameterStore& params) {
  spec = read_spec(r);
  params.values = r.f64s();
  if (params.size() != count_parameters(spec)) {
    throw std::runtime_error("checkpoint: parameter payload length does not match spec");
  }
}

std::string encode_checkpoint(const NetworkSpec& spec, const ParameterStore& params) {
  ByteWriter w;
  write_container_header(w, PayloadKind::kNetwork);
  write_network(w, spec, params);
  return w.bytes();
}

void decode_checkpoint(const std::string& bytes, NetworkSpec& spec, ParameterStore& params) {
  ByteReader r(bytes);
  read_container_header(r, PayloadKind::kNetwork);
  read_network(r, spec, params);
  if (!r.at_end()) throw std::runtime_error("checkpoint: trailing bytes");
}

void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec,
                     const ParameterStore& params) {
  write_file(path, encode_checkpoint(spec, params));
}

void load_checkpoint(const std::filesystem::path& path, NetworkSpec& spec, ParameterStore& params) {
  decode_checkpoint(read_file(path), spec, params);
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace pd::nn
