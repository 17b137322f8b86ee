#pragma once

// Deterministic randomness.
//
// Two rules keep every artifact reproducible across platforms and compilers:
//   1. Independent work items (corpus examples, parameter tensors, epochs)
//      draw from their own generator, sub-seeded by hashing (seed, key).
//      Nothing depends on iteration order or thread count.
//   2. Distribution sampling is implemented here (Box-Muller, Fisher-Yates)
//      instead of via std::<...>_distribution, whose outputs are
//      implementation-defined and differ between standard libraries.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ddsd/common.hpp"

namespace ddsd {

// splitmix64: tiny, well-mixed 64-bit hash/stream. Used both to derive
// sub-seeds and to decorrelate user seeds that differ in one bit.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d4a4a9b5bd528bULL;
  return z ^ (z >> 31);
}

// FNV-1a over a string, for keying sub-streams by tensor/example name.
inline std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derive an independent stream seed from (root seed, label, index).
inline std::uint64_t sub_seed(std::uint64_t root, const std::string& label,
                              std::uint64_t index = 0) {
  std::uint64_t state = root;
  splitmix64(state);
  state ^= hash_string(label);
  splitmix64(state);
  state ^= 0x632be59bd9b4e019ULL + index * 0x9e3779b97f4a7c15ULL;
  return splitmix64(state);
}

// Deterministic generator wrapper around mt19937_64 with portable sampling.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1). 53-bit mantissa path, portable.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection-free modulo bias is negligible for
  // our n (<< 2^32) but we reject anyway to keep the draw exact.
  std::uint64_t uniform_index(std::uint64_t n) {
    DDSD_CHECK(n > 0, "uniform_index needs n > 0");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller. One cached spare per pair.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);  // log(0) guard
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_index(i + 1));
      std::swap(v[i], v[j]);
    }
  }

  // Bernoulli draw.
  bool flip(double p) { return uniform() < p; }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ddsd
