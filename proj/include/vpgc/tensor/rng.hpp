#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace vpgc {

/// Seeded generator with platform-independent draws. std::*_distribution
/// output is implementation-defined, so every draw here is derived from raw
/// 64-bit engine output.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  /// Independent sub-stream derived from (root seed, stream name, index).
  static Rng stream(uint64_t root_seed, std::string_view name, uint64_t index = 0);

  uint64_t bits() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal by Box-Muller.
  double normal();
  /// Standard Gumbel(0, 1).
  double gumbel();
  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n);
  /// Uniformly random permutation of {0, ..., n-1}.
  std::vector<int> permutation(int n);

 private:
  std::mt19937_64 engine_;
};

uint64_t splitmix64(uint64_t x);

}  // namespace vpgc
