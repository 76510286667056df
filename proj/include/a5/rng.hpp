#pragma once

#include <cmath>
#include <cstdint>

namespace a5 {

// Counter-based deterministic generator. A draw is a pure function of
// (seed, stream, counter), so any (epoch, batch, purpose) site can derive
// its own stream and replay identically on every platform: no global state,
// no iteration-order coupling, no long-period generator to carry around.
// The mixer is the splitmix64 finalizer applied to a keyed counter; that is
// plenty for simulation-grade randomness (it is the seeding PRNG of choice
// for xoshiro and friends).
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  // Independent child stream; `purpose` values are small enum-like tags or
  // loop indices. Derivation is itself a mix, so (0,1) and (1,0) differ.
  Rng derive(std::uint64_t purpose) const {
    return Rng(seed_, mix64(stream_ ^ mix64(purpose + 0x51ed2701a5c51ed2ULL)));
  }

  std::uint64_t next_u64() { return mix64(key_() ^ mix64(counter_++)); }

  // Uniform in [0,1), 53-bit mantissa.
  double uniform() { return (double)(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer uniform in [lo, hi] inclusive (small ranges; modulo bias is
  // negligible for range << 2^64 and irrelevant for reproducibility).
  int uniform_int(int lo, int hi) {
    return lo + (int)(next_u64() % (std::uint64_t)(hi - lo + 1));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; consumes exactly two draws, keeps no
  // cached spare, so the counter mapping stays position-independent.
  double normal() {
    double u1 = uniform(), u2 = uniform();
    // Guard the log: uniform() can return exactly 0.
    if (u1 <= 0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double log_uniform(double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t key_() const { return mix64(seed_ + 0x9e3779b97f4a7c15ULL) ^ stream_; }

  static std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

// Stream tags used across the library so independent consumers never
// collide. Derivation chains append loop indices below these.
namespace rng_stream {
constexpr std::uint64_t kInit = 1;      // parameter initialization
constexpr std::uint64_t kShuffle = 2;   // epoch shuffles
constexpr std::uint64_t kAttack = 3;    // PGD restarts
constexpr std::uint64_t kAugment = 4;   // data augmentation
constexpr std::uint64_t kAcquire = 5;   // physical acquisition
constexpr std::uint64_t kSplit = 6;     // dataset subset selection
constexpr std::uint64_t kSynth = 7;     // synthetic data generation
}  // namespace rng_stream

}  // namespace a5
