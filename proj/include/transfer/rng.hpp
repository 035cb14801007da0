#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace transfer {

/// Seeded generator with platform-independent conversions.
///
/// std::mt19937_64's output sequence is fixed by the standard, but the
/// standard distributions are not, so uniform/normal/index draws are derived
/// here directly from the raw 64-bit stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return draw(); }

  /// Number of raw 64-bit draws consumed so far; identifies a stream position.
  std::uint64_t draws() const { return draws_; }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(draw() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) without modulo bias.
  std::uint64_t index(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = draw();
    } while (v >= limit);
    return v % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (one value per call, second discarded).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Normal truncated to [-2, 2] standard deviations by resampling.
  double truncated_normal(double stddev) {
    double z = normal();
    while (std::abs(z) > 2.0) z = normal();
    return stddev * z;
  }

  /// Derives an independent stream; used to give each consumer its own seed.
  Rng split(std::uint64_t salt) {
    const std::uint64_t base = draw();
    std::seed_seq seq{static_cast<std::uint32_t>(base >> 32), static_cast<std::uint32_t>(base),
                      static_cast<std::uint32_t>(salt),
                      static_cast<std::uint32_t>(salt >> 32)};
    std::mt19937_64 e(seq);
    return Rng(e());
  }

 private:
  std::uint64_t draw() {
    ++draws_;
    return engine_();
  }

  std::mt19937_64 engine_;
  std::uint64_t draws_ = 0;
};

}  // namespace transfer
