#pragma once

// Seeded random numbers with a platform-independent stream. The standard
// distributions are implementation-defined, so uniform and normal draws are
// derived here directly from the mt19937_64 output, which the standard pins.

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

namespace handstate {

/// splitmix64 finaliser.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Derives an independent sub-seed from a base seed and a path of integers.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) noexcept;
/// FNV-1a of a string, for folding identifiers into seed paths.
std::uint64_t hash_string(std::string_view s) noexcept;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n), n > 0, without modulo bias.
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace handstate
