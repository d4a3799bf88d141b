#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace phono {

// Seeded generator with platform-independent draws. The standard
// distributions are implementation-defined, so every draw used by the
// pipeline goes through the helpers below.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t uniform_index(std::uint64_t n);

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

  // Standard normal via Box-Muller (no cached spare, so draws stay aligned).
  double normal();

  // Draw an index proportionally to non-negative weights.
  std::size_t categorical(const std::vector<double>& weights);

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

// Stable 64-bit FNV-1a; used to derive per-task seeds from names.
std::uint64_t fnv1a64(std::string_view text, std::uint64_t basis = 0xcbf29ce484222325ULL);

// hash(global seed, language, fold): the per-task seed for independent
// (language, fold) work items.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view language, std::uint64_t fold);

}  // namespace phono
