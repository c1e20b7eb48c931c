#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace ctrleval {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) noexcept {
  return mix64(a ^ mix64(b + 0x632BE59BD9B4E019ULL));
}

/// Counter-based generator: the n-th draw is a pure function of
/// (seed, stream, n), so results match across platforms and standard
/// libraries. Streams let callers derive independent sequences per record,
/// subset or trial without sharing state.
class CounterRng {
 public:
  constexpr explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(hash_combine(seed, stream)) {}

  constexpr std::uint64_t next_u64() noexcept { return mix64(key_ ^ mix64(counter_++)); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  constexpr double next_double() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Unbiased uniform integer in [0, bound). bound must be positive.
  constexpr std::uint64_t next_below(std::uint64_t bound) noexcept {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  constexpr bool bernoulli(double p) noexcept { return next_double() < p; }

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(next_below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace ctrleval
