#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace optbench {

// RNG stream ids. Streams keyed by (seed, stream, epoch) are independent, so
// every random decision in the harness is a pure function of those three.
enum class Stream : std::uint32_t {
  kParamInit = 1,
  kShuffle = 2,
  kSynthTrain = 3,
  kSynthTest = 4,
  kTrainEvalSplit = 5,
};

// Philox4x32-10 counter-based generator (Salmon et al. constants). Stateless
// per block: output depends only on (key, counter), which makes draws
// reproducible across platforms and safe to replicate in other languages.
class Philox {
 public:
  Philox(std::uint64_t seed, Stream stream, std::uint32_t epoch = 0)
      : Philox(seed, static_cast<std::uint32_t>(stream), epoch) {}

  Philox(std::uint64_t seed, std::uint32_t stream, std::uint32_t epoch = 0)
      : key0_(static_cast<std::uint32_t>(seed)),
        key1_(static_cast<std::uint32_t>(seed >> 32)),
        stream_(stream),
        epoch_(epoch) {}

  std::uint32_t next_u32() {
    if (pos_ == 4) {
      block_ = compute_block(block_index_++);
      pos_ = 0;
    }
    return block_[pos_++];
  }

  std::uint64_t next_u64() {
    std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // [0,1) with 24 random bits.
  float uniform_float() {
    return static_cast<float>(next_u32() >> 8) * 0x1.0p-24f;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the pair is consumed in a fixed order.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = static_cast<double>((next_u64() >> 11) | 1) * 0x1.0p-53;  // (0,1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  // Normal rejected outside [-cut, cut] sigmas, then scaled.
  double truncated_normal(double sigma, double cut = 2.0) {
    for (;;) {
      double z = normal();
      if (std::abs(z) <= cut) return z * sigma;
    }
  }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    std::uint64_t threshold = (~std::uint64_t(0) - n + 1) % n;  // 2^64 mod n
    for (;;) {
      std::uint64_t x = next_u64();
      if (x >= threshold) return x % n;
    }
  }

 private:
  static void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                      std::uint32_t& lo) {
    std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
  }

  std::array<std::uint32_t, 4> compute_block(std::uint64_t index) const {
    std::uint32_t c0 = static_cast<std::uint32_t>(index);
    std::uint32_t c1 = static_cast<std::uint32_t>(index >> 32);
    std::uint32_t c2 = stream_;
    std::uint32_t c3 = epoch_;
    std::uint32_t k0 = key0_;
    std::uint32_t k1 = key1_;
    for (int round = 0; round < 10; ++round) {
      std::uint32_t hi0, lo0, hi1, lo1;
      mulhilo(0xD2511F53u, c0, hi0, lo0);
      mulhilo(0xCD9E8D57u, c2, hi1, lo1);
      std::uint32_t n0 = hi1 ^ c1 ^ k0;
      std::uint32_t n1 = lo1;
      std::uint32_t n2 = hi0 ^ c3 ^ k1;
      std::uint32_t n3 = lo0;
      c0 = n0;
      c1 = n1;
      c2 = n2;
      c3 = n3;
      k0 += 0x9E3779B9u;
      k1 += 0xBB67AE85u;
    }
    return {c0, c1, c2, c3};
  }

  std::uint32_t key0_, key1_, stream_, epoch_;
  std::uint64_t block_index_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int pos_ = 4;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

// Fisher-Yates permutation of {0..n-1} driven by `rng`.
inline std::vector<std::int64_t> permutation(std::int64_t n, Philox& rng) {
  std::vector<std::int64_t> p(static_cast<size_t>(n));
  std::iota(p.begin(), p.end(), std::int64_t(0));
  for (std::int64_t i = n - 1; i > 0; --i) {
    std::uint64_t j = rng.below(static_cast<std::uint64_t>(i) + 1);
    std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
  }
  return p;
}

}  // namespace optbench
