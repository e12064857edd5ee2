#pragma once

#include <cmath>
#include <cstdint>

namespace gaze3d {

// SplitMix64 finalizer. Bijective 64-bit mix, identical on every platform.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Counter-based generator: SplitMix64 applied to (key, counter). Streams
// derived from the same seed but different labels are independent, and a
// stream's output depends only on (seed, labels, draw index), never on
// scheduling. This is what makes per-sample generation order-free.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix64(seed)) {}
  Rng(std::uint64_t seed, std::uint64_t stream) : key_(mix64(mix64(seed) ^ mix64(stream))) {}
  Rng(std::uint64_t seed, std::uint64_t stream_a, std::uint64_t stream_b)
      : key_(mix64(mix64(mix64(seed) ^ mix64(stream_a)) ^ mix64(stream_b))) {}

  std::uint64_t next_u64() { return mix64(key_ ^ counter_++); }

  // uniform in [0, 1) with 53 random bits
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // uniform integer in [0, n)
  std::uint64_t uniform_index(std::uint64_t n) {
    // 64-bit multiply-shift; bias is < 2^-53 for the n used here
    return static_cast<std::uint64_t>(uniform01() * static_cast<double>(n));
  }

  // standard normal via Box-Muller (explicit formula, platform independent)
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// FNV-1a over bytes; used for config hashes and manifest integrity.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xCBF29CE484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace gaze3d
