#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace emasam {

/// SplitMix64 finalizer (Steele, Lea & Flood 2014).  Bijective on 64-bit words.
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Counter-based generator: output n of stream `key` is
/// splitmix64_mix(key + (n + 1) * 0x9E3779B97F4A7C15).
///
/// This is exactly the SplitMix64 sequence seeded with `key`, but because
/// every draw is a pure function of (key, counter) a stream can be
/// re-positioned or forked without replaying it.  All randomness in the
/// project flows through this class so results are identical on every
/// platform and in every language that reimplements the two formulas above.
class CounterRng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  explicit constexpr CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(key), counter_(counter) {}

  constexpr std::uint64_t key() const noexcept { return key_; }
  constexpr std::uint64_t counter() const noexcept { return counter_; }

  constexpr std::uint64_t next_u64() noexcept {
    ++counter_;
    return splitmix64_mix(key_ + counter_ * kGolden);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  constexpr double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Independent child stream, identified by `stream`.
  constexpr CounterRng fork(std::uint64_t stream) const noexcept {
    return CounterRng(splitmix64_mix(key_ ^ splitmix64_mix(stream + kGolden)));
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace emasam
