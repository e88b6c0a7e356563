#pragma once

#include <cstdint>

#include "speechflow/tensor.hpp"

namespace speechflow {

// Counter-based generator: output i is a SplitMix64 finalizer applied to
// seed + i * golden-gamma, so the full state is (seed, counter).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  // Independent generator keyed on this seed and a stream tag; does not
  // advance this generator.
  Rng derive(std::uint64_t stream) const;

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

std::uint64_t mix64(std::uint64_t x);

Tensor randn(Rng& rng, Shape shape);
Tensor rand_uniform(Rng& rng, Shape shape, double lo, double hi);

}  // namespace speechflow
