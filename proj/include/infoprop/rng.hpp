#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

#include "infoprop/linalg.hpp"

namespace infoprop {

/// 64-bit FNV-1a. Used for labeled seed derivation and file/content hashes;
/// fully specified, so results are identical across platforms.
inline uint64_t fnv1a64(std::string_view data, uint64_t h = 14695981039346656037ull) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t fnv1a64_u64(uint64_t v, uint64_t h) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffu;
    h *= 1099511628211ull;
  }
  return h;
}

/// Derive a child seed from (master seed, purpose label, index). All
/// randomness in the pipeline fans out from one master seed through this.
inline uint64_t derive_seed(uint64_t master, std::string_view label, uint64_t index = 0) {
  uint64_t h = fnv1a64_u64(master, 14695981039346656037ull);
  h = fnv1a64(label, h);
  h = fnv1a64_u64(index, h);
  return h;
}

/// Seeded random stream. The normal variate uses an explicit Box-Muller
/// transform rather than std::normal_distribution, whose algorithm is
/// unspecified by the standard and differs between stdlibs.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return (gen_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Vec normal_vec(int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  /// Uniform index in [0, n). Rejection sampled, so every index is equally
  /// likely for any n.
  uint64_t uniform_index(uint64_t n) {
    if (n == 0) throw EmptyInput("uniform_index: n must be positive");
    if (n == 1) return 0;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = 0;
    do {
      v = gen_();
    } while (v >= limit);
    return v % n;
  }

  uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace infoprop
