#include <algorithm>
#include <set>
#include <vector>

#include "doctest.h"
#include "herdkit/seed.hpp"

using namespace herdkit;

TEST_SUITE("seed") {

TEST_CASE("derive_seed is deterministic and label-sensitive") {
  CHECK(derive_seed(42, "peer-init-0") == derive_seed(42, "peer-init-0"));
  CHECK(derive_seed(42, "peer-init-0") != derive_seed(42, "peer-init-1"));
  CHECK(derive_seed(42, "peer-init-0") != derive_seed(43, "peer-init-0"));
  CHECK(derive_seed(0, "") != derive_seed(1, ""));
}

TEST_CASE("derive_seed avoids collisions across a realistic label family") {
  std::set<uint64_t> seen;
  for (int i = 0; i < 64; ++i) seen.insert(derive_seed(7, "peer-init-" + std::to_string(i)));
  for (int e = 0; e < 64; ++e) seen.insert(derive_seed(7, "data-shuffle-epoch-" + std::to_string(e)));
  for (int s = 0; s < 512; ++s) seen.insert(derive_seed(7, "role-sample-" + std::to_string(s)));
  for (int s = 0; s < 512; ++s) seen.insert(derive_seed(7, "flip-" + std::to_string(s)));
  CHECK(seen.size() == 64 + 64 + 512 + 512);
}

TEST_CASE("same seed reproduces the stream, different seeds diverge") {
  Rng a(123), b(123), c(124);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    uint64_t x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
    all_equal = all_equal && (x == y);
    any_diff = any_diff || (x != z);
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("uniform_below stays in range and covers the range") {
  Rng rng(5);
  std::set<uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    uint64_t v = rng.uniform_below(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
  CHECK(Rng(1).uniform_below(1) == 0);
}

TEST_CASE("uniform_double lies in [0,1) and is not constant") {
  Rng rng(9);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 1000; ++i) {
    double v = rng.uniform_double();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo < 0.1);
  CHECK(hi > 0.9);
}

TEST_CASE("bernoulli respects degenerate probabilities") {
  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    CHECK(rng.bernoulli(0.0) == false);
    CHECK(rng.bernoulli(1.0) == true);
  }
}

TEST_CASE("shuffle yields a permutation and is seed-deterministic") {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  std::vector<int> a = v, b = v;
  Rng r1(77), r2(77);
  r1.shuffle(a);
  r2.shuffle(b);
  CHECK(a == b);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == v);
  std::vector<int> c = v;
  Rng r3(78);
  r3.shuffle(c);
  CHECK(c != a);  // astronomically unlikely to coincide
}

TEST_CASE("sample_without_replacement draws distinct in-range values") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> s = rng.sample_without_replacement(10, 4);
    CHECK(s.size() == 4);
    std::set<int> uniq(s.begin(), s.end());
    CHECK(uniq.size() == 4);
    for (int v : s) {
      CHECK(v >= 0);
      CHECK(v < 10);
    }
  }
  std::vector<int> all = Rng(4).sample_without_replacement(5, 5);
  std::set<int> uniq(all.begin(), all.end());
  CHECK(uniq.size() == 5);
}

TEST_CASE("role-frequency sanity: each index appears roughly uniformly") {
  Rng rng(21);
  std::vector<int> counts(8, 0);
  const int draws = 20000;
  for (int i = 0; i < draws; ++i) counts[rng.sample_without_replacement(8, 2)[0]]++;
  // Binomial(20000, 1/8): mean 2500, sd ~ 46.8; allow 5 sigma.
  for (int c : counts) {
    CHECK(c > 2500 - 234);
    CHECK(c < 2500 + 234);
  }
}

}  // TEST_SUITE
