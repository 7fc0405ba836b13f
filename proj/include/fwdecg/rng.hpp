#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace fwdecg {

/// Seedable generator with a fully specified output sequence.
///
/// The raw stream is std::mt19937_64, whose output is fixed by the C++
/// standard. The distribution helpers are implemented here instead of using
/// <random> distributions, which are implementation-defined, so that a seed
/// reproduces the same draws with every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) built from the top 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in the closed interval [lo, hi] (rejection sampling, no modulo bias).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1U;
    if (span == 0) return static_cast<std::int64_t>(engine_());
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t draw = engine_();
    while (draw >= limit) draw = engine_();
    return lo + static_cast<std::int64_t>(draw % span);
  }

  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal();

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i - 1)));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer applied to (base, stream); used to derive independent per-case seeds.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// FNV-1a 64-bit hash of a byte string, used for manifest content hashes.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes);

}  // namespace fwdecg
