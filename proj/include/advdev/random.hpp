#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace advdev {

/// The one seedable generator used for every stochastic step.
///
/// Engine is std::mt19937_64, whose output sequence is fixed by the standard.
/// The derived draws are written out here rather than taken from <random>
/// distributions, whose algorithms vary between standard libraries:
///   uniform()        top 53 bits of one engine output, scaled to [0, 1)
///   uniform_int(n)   rejection sampling on one engine output per attempt
///   normal()         Box-Muller on two uniform() draws, no caching
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  bool coin() { return uniform() < 0.5; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace advdev
