#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace mbsgd {

/// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based generator: the output is a pure function of (key, counters), so a draw
/// can be regenerated in any order and from any thread.
class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t seed) noexcept : key_(mix64(seed)) {}

  constexpr std::uint64_t bits(std::uint64_t iteration, std::uint64_t slot) const noexcept {
    return mix64(mix64(key_ ^ mix64(iteration)) + slot);
  }

  /// Uniform index in [0, n) via 128-bit multiply-shift (bias below n / 2^64).
  std::uint64_t index(std::uint64_t iteration, std::uint64_t slot, std::uint64_t n) const noexcept {
    const auto wide = static_cast<unsigned __int128>(bits(iteration, slot)) * n;
    return static_cast<std::uint64_t>(wide >> 64);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform(std::uint64_t iteration, std::uint64_t slot) const noexcept {
    return static_cast<double>(bits(iteration, slot) >> 11) * 0x1.0p-53;
  }

 private:
  std::uint64_t key_;
};

/// Seed for an independent sub-stream (trial, sweep cell, ...).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) noexcept {
  return mix64(mix64(seed ^ 0x6a09e667f3bcc909ULL) ^ mix64(a + 0x3c6ef372fe94f82bULL) ^ (b * 0xa54ff53a5f1d36f1ULL));
}

/// rows x cols matrix of independent standard normals drawn from std::mt19937_64(seed).
Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed);

}  // namespace mbsgd
