#pragma once

#include <cstdint>
#include <random>

namespace sngd {

/// Seeded random generator with deterministic stream splitting.
///
/// Every stochastic operation in the library takes one of these by
/// reference, so a run is a pure function of its master seed.  Child
/// generators created by split() depend only on (seed, stream), never on
/// how far the parent has advanced, which lets concurrent sweep points
/// produce identical results regardless of scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix(seed)) {}

  /// Standard normal draw.
  double normal() {
    std::normal_distribution<double> dist;
    return dist(engine_);
  }

  /// Uniform draw in [0, 1).
  double uniform() {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    return dist(engine_);
  }

  /// Uniform integer in [0, n). n must be >= 1.
  std::uint64_t uniform_int(std::uint64_t n) {
    std::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
    return dist(engine_);
  }

  /// Derived generator for an independent stream. Pure function of
  /// (seed, stream); does not perturb or depend on this generator's state.
  Rng split(std::uint64_t stream) const {
    return Rng(mix(seed_ ^ mix(stream + 0x9e3779b97f4a7c15ull)));
  }

  std::uint64_t seed() const { return seed_; }

  std::mt19937_64& engine() { return engine_; }

 private:
  // splitmix64 finalizer; spreads low-entropy seeds over the full state.
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace sngd
