#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace demotune {

// Seeded generator with portable draws; the std distributions are
// implementation-defined, so sampling is written out here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n), rejection sampled so there is no modulo bias.
  std::size_t index(std::size_t n);

  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64 finaliser; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

std::uint64_t fnv1a(std::string_view bytes);

}  // namespace demotune
