#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace pd {

// Mixes a master seed with a stream name so that each component draws from
// its own independent sequence.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream);

// Seeded generator with portable uniform draws. Distribution objects from
// <random> are implementation-defined, so the conversions live here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform in [0, n). n must be positive.
  std::size_t uniform_int(std::size_t n);

  bool bernoulli(double p) { return uniform() < p; }

  Rng fork(std::string_view stream) { return Rng(derive_seed(engine_(), stream)); }

  std::string serialize() const;
  static Rng deserialize(const std::string& text);

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace pd
