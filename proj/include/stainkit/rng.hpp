#pragma once

#include <cstdint>

namespace stainkit {

/// Stateless SplitMix64 finalizer (Steele/Lea/Flood via Vigna).
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from (seed, stream, salt). Used to key
/// per-image RNG streams so parallel batches draw identically regardless of
/// scheduling.
inline std::uint64_t derive_stream_seed(std::uint64_t seed, std::uint64_t stream,
                                        std::uint64_t salt = 0) {
  return mix64(seed ^ mix64(stream ^ mix64(salt)));
}

/// SplitMix64 generator. All draws are bit-exact across platforms; no
/// std::uniform_* distributions are used anywhere in the toolkit because their
/// output is implementation-defined.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1), 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi); returns exactly lo when lo == hi.
  double uniform(double lo, double hi) { return lo + next_double() * (hi - lo); }

  /// Uniform integer in [0, n) via Lemire's multiply-shift (n >= 1).
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

 private:
  std::uint64_t state_;
};

}  // namespace stainkit
