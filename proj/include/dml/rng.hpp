#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace dml {

/// SplitMix64 generator.
///
/// The output stream is fully specified so that fold plans, initializations
/// and shuffles reproduce bit-for-bit on every platform:
///
///   state  <- state + 0x9E3779B97F4A7C15
///   z      <- state
///   z      <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z      <- (z ^ (z >> 27)) * 0x94D049BB133111EB
///   output <- z ^ (z >> 31)
///
/// Derived quantities are built only from next_u64():
///   uniform()        top 53 bits scaled by 2^-53, in [0, 1)
///   uniform_index(n) rejection sampling on the top bits, unbiased
///   normal()         Box-Muller, one output per two uniforms (no caching)
///   shuffle()        Fisher-Yates, from the back
///
/// Changing any of the above changes every generated experiment and counts
/// as a breaking change.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform double in [0, 1).
  double uniform();
  /// Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);
  /// Standard normal draw.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::span<T> xs) {
    for (std::size_t i = xs.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(xs[i - 1], xs[j]);
    }
  }
  template <typename T>
  void shuffle(std::vector<T>& xs) {
    shuffle(std::span<T>(xs));
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

/// SplitMix64 finalizer applied to a single word.
std::uint64_t mix64(std::uint64_t x);

/// Seed for an independent stream keyed by (master, a, b). Used for per-fold
/// and per-purpose streams so that results never depend on scheduling order.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

}  // namespace dml
