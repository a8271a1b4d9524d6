#include "herdkit/seed.hpp"

namespace herdkit {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

uint64_t derive_seed(uint64_t master_seed, std::string_view label) {
  uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a 64-bit offset basis
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  // Two mixing rounds so that even single-bit label differences decorrelate.
  return splitmix64(splitmix64(master_seed ^ h));
}

uint64_t Rng::uniform_below(uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("Rng::uniform_below: bound must be positive");
  // Rejection sampling over the largest multiple of `bound` below 2^64.
  uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % bound);
  uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % bound;
}

double Rng::uniform_double() {
  // Top 53 bits scaled into [0, 1).
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform_range(double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("Rng::uniform_range: lo must be < hi");
  return lo + (hi - lo) * uniform_double();
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
  if (k < 0 || n < 0 || k > n) {
    throw std::invalid_argument("Rng::sample_without_replacement: need 0 <= k <= n");
  }
  // Partial Fisher-Yates: the first k slots of a virtual identity permutation.
  std::vector<int> pool(n);
  for (int i = 0; i < n; ++i) pool[i] = i;
  std::vector<int> out(k);
  for (int i = 0; i < k; ++i) {
    size_t j = i + static_cast<size_t>(uniform_below(static_cast<uint64_t>(n - i)));
    std::swap(pool[i], pool[j]);
    out[i] = pool[i];
  }
  return out;
}

}  // namespace herdkit
