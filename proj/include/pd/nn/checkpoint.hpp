#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pd/bytes.hpp"
#include "pd/nn/network.hpp"

namespace pd::nn {

// Checkpoint container: magic "PDST", u32 format version, u32 payload kind,
// then the payload. All integers and float64 values are little-endian.
inline constexpr char kCheckpointMagic[4] = {'P', 'D', 'S', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class PayloadKind : std::uint32_t { kNetwork = 0, kMultiTaskNetwork = 1, kStartPool = 2 };

void write_container_header(ByteWriter& w, PayloadKind kind);
// Throws std::runtime_error on bad magic, unsupported version, or a kind
// other than the expected one.
void read_container_header(ByteReader& r, PayloadKind expected);

void write_spec(ByteWriter& w, const NetworkSpec& spec);
NetworkSpec read_spec(ByteReader& r);

// Spec followed by u64 parameter count and the float64 payload.
void write_network(ByteWriter& w, const NetworkSpec& spec, const ParameterStore& params);
void read_network(ByteReader& r, NetworkSpec& spec, ParameterStore& params);

std::string encode_checkpoint(const NetworkSpec& spec, const ParameterStore& params);
void decode_checkpoint(const std::string& bytes, NetworkSpec& spec, ParameterStore& params);

void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec,
                     const ParameterStore& params);
void load_checkpoint(const std::filesystem::path& path, NetworkSpec& spec, ParameterStore& params);

void write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace pd::nn
