#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace herdkit {

// Derives an independent 64-bit stream seed from a master seed and a label
// such as "peer-init-3" or "data-shuffle-epoch-0". The label is hashed with
// FNV-1a and the result is mixed with the master seed through the splitmix64
// finalizer, so every (master_seed, label) pair lands on a well-separated
// stream and the mapping is identical on every platform.
uint64_t derive_seed(uint64_t master_seed, std::string_view label);

// Deterministic RNG used everywhere randomness is needed. The engine is
// std::mt19937_64, whose raw output sequence is pinned by the standard; the
// distribution helpers below are implemented by hand because the standard
// library's distribution objects are allowed to differ between toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Unbiased integer in [0, bound) via rejection sampling.
  uint64_t uniform_below(uint64_t bound);

  // Double in [0, 1) with 53 random bits.
  double uniform_double();

  // Double in [lo, hi).
  double uniform_range(double lo, double hi);

  bool bernoulli(double p) { return uniform_double() < p; }

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (size_t i = values.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

  // k distinct values drawn from {0, ..., n-1}, in draw order.
  std::vector<int> sample_without_replacement(int n, int k);

 private:
  std::mt19937_64 engine_;
};

}  // namespace herdkit
