// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#ifndef DAGGER_RNG_HPP
#define DAGGER_RNG_HPP

#include <array>
#include <cstdint>
#include <vector>

namespace dagger {

/// Splittable generator: xoshiro256** state seeded through SplitMix64.
///
/// All random draws in the toolkit (weight init, shuffling, synthetic data,
/// baseline perturbations) go through this type so that a run is fully
/// determined by its seed. Distributions are implemented here rather than
/// via <random> because the standard distributions are not portable
/// bit-for-bit across library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  /// Standard normal via Box-Muller (caches the second variate).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Uniform integer in [0, n). `n` must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Independent child stream; advances this generator by one draw.
  Rng split();

  /// Fisher-Yates shuffle of [0, n).
  std::vector<int> permutation(int n);

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dagger

#endif  // DAGGER_RNG_HPP
