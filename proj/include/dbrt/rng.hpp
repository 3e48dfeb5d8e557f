#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace dbrt {

// splitmix64 finalizer; used both as a mixer for seed derivation and as the
// category-holdout hash. Fully portable (no library-defined distributions).
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_str(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
  return splitmix64(a ^ splitmix64(b));
}

// Independent stream derivation: every entity (recipe, image, epoch, trial)
// draws from its own stream keyed by (root seed, tag, indices), so generation
// order and parallelism cannot change results.
inline uint64_t derive_seed(uint64_t root, std::string_view tag) {
  return hash_combine(root, hash_str(tag));
}
inline uint64_t derive_seed(uint64_t root, std::string_view tag, uint64_t a) {
  return hash_combine(derive_seed(root, tag), a);
}
inline uint64_t derive_seed(uint64_t root, std::string_view tag, uint64_t a,
                            uint64_t b) {
  return hash_combine(derive_seed(root, tag, a), b);
}

// mt19937_64 core with hand-rolled distributions. The standard fully pins
// the engine but not the distributions, and bit-stable output matters here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double u01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  // Unbiased integer in [0, n).
  uint64_t below(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  // Box-Muller, pair-cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * u01() - 1.0;
      v = 2.0 * u01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return u * f;
  }

  // Exponential(1).
  double expo() { return -std::log1p(-u01()); }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dbrt
