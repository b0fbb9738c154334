#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "optbench/rng.hpp"

using namespace optbench;

TEST_SUITE("rng") {

TEST_CASE("same key reproduces the sequence exactly") {
  Philox a(1234567, Stream::kShuffle, 7);
  Philox b(1234567, Stream::kShuffle, 7);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u32() == b.next_u32());
}

TEST_CASE("seed, stream and epoch all separate the streams") {
  Philox base(42, Stream::kShuffle, 0);
  Philox other_seed(43, Stream::kShuffle, 0);
  Philox other_stream(42, Stream::kParamInit, 0);
  Philox other_epoch(42, Stream::kShuffle, 1);
  bool d1 = false, d2 = false, d3 = false;
  for (int i = 0; i < 16; ++i) {
    std::uint32_t x = base.next_u32();
    d1 |= x != other_seed.next_u32();
    d2 |= x != other_stream.next_u32();
    d3 |= x != other_epoch.next_u32();
  }
  CHECK(d1);
  CHECK(d2);
  CHECK(d3);
}

TEST_CASE("uniform stays in [0,1) and looks uniform") {
  Philox rng(7, Stream::kSynthTrain);
  double acc = 0.0;
  for (int i = 0; i < 100000; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    acc += u;
  }
  CHECK(std::abs(acc / 100000 - 0.5) < 0.01);
}

TEST_CASE("normal moments") {
  Philox rng(7, Stream::kSynthTrain);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 0.02);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("truncated normal respects the cut") {
  Philox rng(7, Stream::kParamInit);
  for (int i = 0; i < 10000; ++i) {
    CHECK(std::abs(rng.truncated_normal(0.05)) <= 2.0 * 0.05);
  }
}

TEST_CASE("below is in range and hits everything") {
  Philox rng(99, Stream::kShuffle);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    std::uint64_t v = rng.below(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("permutation is a permutation and is pure in (seed, epoch)") {
  Philox a(5, Stream::kShuffle, 3);
  auto p = permutation(257, a);
  std::vector<std::int64_t> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (std::int64_t i = 0; i < 257; ++i) CHECK(sorted[static_cast<size_t>(i)] == i);

  Philox b(5, Stream::kShuffle, 3);
  CHECK(permutation(257, b) == p);

  Philox c(5, Stream::kShuffle, 4);
  CHECK(permutation(257, c) != p);
}

}  // TEST_SUITE
