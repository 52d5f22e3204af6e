#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "ad/tensor.hpp"

namespace ad {

/// Deterministic random stream. All distributions are derived from the raw
/// mt19937_64 output with fixed arithmetic, so sequences are reproducible
/// across platforms and standard-library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  Index uniform_index(Index n) {
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<Index>(x % un);
  }

  /// Standard normal via Box-Muller (one value per call; two uniforms consumed).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Standard Gumbel: -ln(-ln(u)), u in (0, 1).
  double gumbel() {
    double u = uniform();
    constexpr double kEps = 1e-300;
    if (u < kEps) u = kEps;
    return -std::log(-std::log(u) + kEps);
  }

  template <typename T>
  void fill_normal(ArrayX<T>& a) {
    for (Index i = 0; i < a.size(); ++i) a[i] = static_cast<T>(normal());
  }

  /// Derive an independent stream; `tag` distinguishes sibling streams.
  Rng fork(std::uint64_t tag) {
    const std::uint64_t s = next_u64() ^ (tag * 0x9e3779b97f4a7c15ULL);
    return Rng(s);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ad
