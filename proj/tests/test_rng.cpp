#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "spwc/rng.hpp"

using namespace spwc;

TEST_CASE("splitmix64 matches the reference generator's first output") {
  // Reference SplitMix64 with state 0: first output.
  CHECK(splitmix64(0) == 0xE220A8397B1DCDAFULL);
}

TEST_CASE("Rng engine is mt19937_64 seeded through splitmix64") {
  std::mt19937_64 reference(splitmix64(42));
  Rng rng(42);
  for (int i = 0; i < 100; ++i) CHECK(rng.next_u64() == reference());
}

TEST_CASE("mt19937_64 standard conformance value") {
  std::mt19937_64 e;  // default seed 5489
  e.discard(9999);
  CHECK(e() == 9981545732273789042ULL);
}

TEST_CASE("uniform uses the top 53 bits") {
  std::mt19937_64 reference(splitmix64(7));
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const double expected = static_cast<double>(reference() >> 11) / 9007199254740992.0;
    CHECK(rng.uniform() == expected);
  }
}

TEST_CASE("same seed gives the same sequence, different seeds differ") {
  Rng a(123), b(123), c(124);
  bool differs = false;
  for (int i = 0; i < 50; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs = differs || x != c.next_u64();
  }
  CHECK(differs);
}

TEST_CASE("below stays in range and rejects a zero bound") {
  Rng rng(3);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto x = rng.below(7);
    REQUIRE(x < 7);
    ++counts[x];
  }
  // Each bucket ~ Binomial(7000, 1/7): mean 1000, sd ~29.3; 6 sd band.
  for (int c : counts) CHECK(std::abs(c - 1000) < 176);
  CHECK_THROWS(rng.below(0));
}

TEST_CASE("normal draws have mean 0 and variance 1") {
  Rng rng(11);
  const int n = 200000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sum_sq += z * z;
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  CHECK(std::abs(mean) < 5.0 / std::sqrt(n));
  CHECK(std::abs(var - 1.0) < 5.0 * std::sqrt(2.0 / n));
}

TEST_CASE("derive is deterministic, does not advance the parent, separates streams") {
  Rng parent(99);
  Rng d1 = parent.derive(1);
  Rng d1_again = parent.derive(1);
  Rng d2 = parent.derive(2);
  CHECK(d1.next_u64() == d1_again.next_u64());
  CHECK(d1.seed() != d2.seed());
  Rng fresh(99);
  CHECK(parent.next_u64() == fresh.next_u64());
}

TEST_CASE("shuffle and random_permutation produce bijections") {
  Rng rng(5);
  const auto perm = random_permutation(1000, rng);
  std::vector<std::size_t> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) REQUIRE(sorted[i] == i);
  std::size_t fixed_points = 0;
  for (std::size_t i = 0; i < perm.size(); ++i) fixed_points += perm[i] == i;
  CHECK(fixed_points < 10);
}
