#pragma once

#include <cmath>
#include <cstdint>

namespace tdnet {

/// Deterministic generator with hand-rolled distributions so that streams are
/// bit-stable across standard library implementations. Core is splitmix64.
class Rng {
public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  /// Standard normal via Box-Muller (pairs cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Derives an independent stream key from (seed, stream id, step).
  /// Used to give every iteration/purpose its own reproducible generator,
  /// which keeps RNG streams stable across checkpoint resume.
  static uint64_t derive(uint64_t seed, uint64_t stream, uint64_t step = 0) {
    uint64_t z = seed;
    auto mix = [&z](uint64_t v) {
      z ^= v + 0x9e3779b97f4a7c15ULL + (z << 6) + (z >> 2);
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      z ^= z >> 31;
    };
    mix(stream);
    mix(step);
    return z;
  }

private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Stream ids for Rng::derive, one per randomized purpose.
namespace rng_stream {
inline constexpr uint64_t kInit = 1;
inline constexpr uint64_t kCasePick = 2;
inline constexpr uint64_t kPatchOrigin = 3;
inline constexpr uint64_t kDropout = 4;
inline constexpr uint64_t kPhantom = 5;
inline constexpr uint64_t kScribble = 6;
}  // namespace rng_stream

}  // namespace tdnet
