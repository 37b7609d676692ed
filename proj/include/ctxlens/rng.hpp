#pragma once

#include <cstdint>
#include <initializer_list>

namespace ctxlens {

/**
 * Counter-based generator: the n-th output is a pure function of (key, n).
 *
 * Streams are split by hashing a parent key with a child index, so work
 * items running in parallel each get an independent stream without any
 * shared state, and results do not depend on scheduling order. Outputs are
 * identical on every platform (splitmix64 finalizer, integer arithmetic only).
 */
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Independent child stream for index `i`.
  CounterRng split(std::uint64_t i) const noexcept {
    return CounterRng(mix(key_ ^ mix(i + 0x632be59bd9b4e019ULL)));
  }

  /// Child stream keyed by a path of indices, e.g. {prompt, sample}.
  CounterRng split(std::initializer_list<std::uint64_t> path) const noexcept {
    CounterRng r = *this;
    for (auto i : path) r = r.split(i);
    return r;
  }

  std::uint64_t next_u64() noexcept { return mix(key_ + 0x2545f4914f6cdd1dULL * ++counter_); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double next_double() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [lo, hi] (inclusive), rejection-sampled to avoid bias.
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) noexcept {
    const std::uint64_t span = hi - lo;
    if (span == UINT64_MAX) return next_u64();
    const std::uint64_t n = span + 1;
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return lo + v % n;
  }

  std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace ctxlens
