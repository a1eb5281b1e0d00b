#pragma once

#include <cstdint>

namespace toral {

/// Seeded, splittable uniform generator (SplitMix64). Child streams are
/// derived by hashing the parent state with a key, so trial k of a run can
/// draw from split(k) regardless of which thread executes it.
class Rng {
 public:
  explicit constexpr Rng(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ += 0x9E3779B97F4A7C15ull;
    return mix(state_);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  constexpr double uniform() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  constexpr Rng split(std::uint64_t key) const noexcept {
    return Rng(mix(state_ ^ mix(key + 0xD1B54A32D192ED03ull)));
  }

  constexpr std::uint64_t state() const noexcept { return state_; }

 private:
  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace toral
