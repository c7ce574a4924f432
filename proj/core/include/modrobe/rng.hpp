#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "modrobe/tensor.hpp"

namespace modrobe {

/// splitmix64 finalizer; decent avalanche, cheap, reproducible everywhere.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// FNV-1a over a byte string, used to fold stream tags into seeds.
inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Derives an independent child seed from a parent seed and a textual tag.
/// Same (seed, tag) always gives the same child; different tags give streams
/// that never collide in practice. This is how jobs, phases and data splits
/// get their own reproducible randomness.
inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag) {
  return mix64(seed ^ fnv1a64(tag));
}

/// Thin wrapper around mt19937_64. Distribution objects are constructed per
/// call on purpose: it keeps draw sequences a function of (seed, call order)
/// only, with no hidden distribution state carried across calls.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(engine_);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(engine_);
  }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> d(0, n - 1);
    return d(engine_);
  }

  bool bernoulli(double p) {
    std::bernoulli_distribution d(p);
    return d(engine_);
  }

  template <typename T>
  void fill_normal(Tensor<T>& t, double mean, double stddev) {
    for (auto& v : t.data()) v = static_cast<T>(normal(mean, stddev));
  }

  template <typename T>
  void fill_uniform(Tensor<T>& t, double lo, double hi) {
    for (auto& v : t.data()) v = static_cast<T>(uniform(lo, hi));
  }

  /// Fisher-Yates shuffle of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = index(i);
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace modrobe
