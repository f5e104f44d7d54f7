#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace metareg {

/// SplitMix64 finaliser: a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// FNV-1a over bytes; used for stable scenario hashes.
constexpr std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Counter-based stream: the n-th output is mix64(key + n * golden gamma).
/// Streams for different keys are independent for practical purposes, and a
/// stream's output depends only on its key and position.
class RandomStream {
public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit RandomStream(std::uint64_t key) : state_(key) {}

  /// Stream for one replication of one scenario.
  static RandomStream derive(std::uint64_t master_seed,
                             std::uint64_t scenario_hash,
                             std::uint64_t replication) {
    std::uint64_t key = mix64(master_seed ^ 0x6A09E667F3BCC909ULL);
    key = mix64(key ^ scenario_hash);
    key = mix64(key + replication * kGamma);
    return RandomStream(key);
  }

  std::uint64_t next() { return mix64(state_ += kGamma); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double uniform_pos() {
    return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
  }

private:
  std::uint64_t state_;
};

/// Standard normal by Marsaglia's polar method. The spare deviate is cached.
class NormalSampler {
public:
  double operator()(RandomStream &rng) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * rng.uniform() - 1.0;
      v = 2.0 * rng.uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Exp(1) as -ln U, U on (0, 1].
inline double sample_exponential(RandomStream &rng) {
  return -std::log(rng.uniform_pos());
}

/// Chi-square with an even number of degrees of freedom 2m, as
/// -2 sum_{j<m} ln U_j. Zero draws (all U_j = 1) are resampled.
inline double sample_chi_square_even(RandomStream &rng, int half_df) {
  for (;;) {
    double acc = 0.0;
    for (int j = 0; j < half_df; ++j)
      acc += std::log(rng.uniform_pos());
    if (acc < 0.0)
      return -2.0 * acc;
  }
}

} // namespace metareg
