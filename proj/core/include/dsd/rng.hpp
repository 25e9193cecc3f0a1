#pragma once

#include <cstdint>
#include <limits>

namespace dsd {

/// Counter-based, splittable random stream.
///
/// Draw i of a stream with key k is `mix64(k + (i + 1) * 0x9E3779B97F4A7C15)`,
/// where `mix64` is the SplitMix64 finalizer. A child stream is keyed by
/// `mix64(k ^ mix64(tag + 0xD1B54A32D192ED03))`, so splitting never consumes
/// draws from the parent. Uniforms take the top 53 bits; normals use the
/// Box-Muller transform and emit the cosine branch first, caching the sine
/// branch for the next call. Integer arithmetic is exact, so the raw stream is
/// identical on every platform.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) noexcept : key_(mix64(seed)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept { return next_u64(); }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept;

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Standard normal deviate.
  double normal() noexcept;

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;

  /// Independent child stream; does not advance this stream.
  Rng split(std::uint64_t tag) const noexcept {
    Rng child;
    child.key_ = mix64(key_ ^ mix64(tag + 0xD1B54A32D192ED03ULL));
    return child;
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  static constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace dsd
