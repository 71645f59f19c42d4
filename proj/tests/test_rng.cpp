#include <doctest.h>

#include <cmath>
#include <set>

#include "ecgmatch/rng.hpp"

using ecgmatch::RandomStream;

TEST_CASE("streams are reproducible and keyed by seed and id") {
  RandomStream a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
  }
  auto s1 = RandomStream(7).substream(1);
  auto s2 = RandomStream(7).substream(2);
  auto s1b = RandomStream(7).substream(1);
  CHECK(s1.next_u64() == s1b.next_u64());
  CHECK(s1.next_u64() != s2.next_u64());
  CHECK(RandomStream::kAlgorithm == "splitmix64-ctr");
}

TEST_CASE("substream does not depend on the parent's position") {
  RandomStream p(5);
  const auto before = p.substream(9).next_u64();
  p.next_u64();
  p.next_u64();
  CHECK(p.substream(9).next_u64() == before);
}

TEST_CASE("uniform and uniform_int stay in range") {
  RandomStream r(1);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 5000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const auto k = r.uniform_int(-2, 3);
    CHECK(k >= -2);
    CHECK(k <= 3);
    seen.insert(k);
  }
  CHECK(seen.size() == 6);
  CHECK(r.uniform_int(4, 4) == 4);
}

TEST_CASE("normal draws have unit moments") {
  RandomStream r(2024);
  const int n = 200000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 3.0 / std::sqrt(n) * 1.5);
  CHECK(std::abs(var - 1.0) < 0.02);
}
