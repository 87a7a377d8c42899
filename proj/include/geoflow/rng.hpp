#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "geoflow/vec.hpp"

namespace geoflow {

/// Counter-based 64-bit PRNG built on the SplitMix64 finalizer
/// (Steele, Lea & Flood; constants 0x9E3779B97F4A7C15,
/// 0xBF58476D1CE4E5B9, 0x94D049BB133111EB). Output i is a pure
/// function of (seed, stream, i), so sequences are identical across
/// platforms and random access is trivial.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(seed ^ mix(stream * 0xD2B74407B1CE6E93ull))) {}

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * 0x9E3779B97F4A7C15ull); }

  /// Uniform in [0,1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller; one spare value cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0,1] so the log is finite.
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Vec normal_vec(std::size_t d) {
    Vec v(d);
    for (auto& x : v) x = normal();
    return v;
  }

  /// Independent deterministic substream.
  CounterRng fork(std::uint64_t label) const { return CounterRng(key_, label + 1); }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace geoflow
