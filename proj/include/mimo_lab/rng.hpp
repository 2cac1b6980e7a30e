#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>

namespace mimo_lab {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Counter-based generator: the i-th draw of stream (seed, stream) is a pure
/// function of (seed, stream, i). Monte-Carlo trials key their own stream by
/// trial index, so results do not depend on scheduling.
class CounterRng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(mix64(seed ^ mix64(stream * kGolden + 0x632BE59BD9B4E019ULL))) {}

  CounterRng split(std::uint64_t stream) const noexcept { return CounterRng(key_, stream); }

  std::uint64_t next() noexcept { return mix64(key_ + (++counter_) * kGolden); }

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }

  /// Standard normal via Box-Muller.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double phi = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(phi);
    has_spare_ = true;
    return r * std::cos(phi);
  }

  /// Circularly symmetric complex Gaussian with E|z|^2 = variance.
  std::complex<double> complex_normal(double variance = 1.0) noexcept {
    const double sd = std::sqrt(variance / 2.0);
    const double re = normal();
    const double im = normal();
    return {sd * re, sd * im};
  }

  /// Uniform integer in [0, n), Lemire's multiply-and-reject.
  std::uint64_t bounded(std::uint64_t n) noexcept {
    unsigned __int128 m = static_cast<unsigned __int128>(next()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(next()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  std::uint8_t bit() noexcept { return static_cast<std::uint8_t>(next() >> 63); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mimo_lab
