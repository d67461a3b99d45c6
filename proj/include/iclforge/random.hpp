#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace iclforge {

// Seeded generator whose draws are identical on every platform. The
// standard distributions are implementation-defined, so bounded integers and
// normals are derived here directly from mt19937_64 output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, n). n must be > 0.
  std::uint64_t uniform_below(std::uint64_t n);

  // Uniform in [0, 1) with 53 random bits.
  double uniform01();

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double normal(double mean = 0.0, double stddev = 1.0);

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view data,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);

// SplitMix64 finalizer; decorrelates combined seeds.
std::uint64_t mix64(std::uint64_t x);

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view salt) {
  return mix64(seed ^ fnv1a64(salt));
}

// floor(x + 0.5) with a small tolerance so that products such as 0.35 * 10
// that land a hair below an exact half still round up.
std::size_t round_half_up(double x);

}  // namespace iclforge
