#pragma once

#include <cstdint>
#include <vector>

namespace dass {

/// Counter-based 64-bit generator: the n-th draw is a pure function of
/// (seed, n), so the full state is two integers and trivially checkpointed.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0, uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  uint64_t seed() const { return seed_; }
  uint64_t counter() const { return counter_; }

  uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  /// Standard normal via Box-Muller; consumes two draws.
  double normal();
  /// Uniform integer in [0, bound).
  uint64_t below(uint64_t bound);

  /// Independent stream derived from this generator's seed and a tag.
  Rng fork(uint64_t tag) const;

  /// Fisher-Yates permutation of [0, n).
  std::vector<int64_t> permutation(int64_t n);

 private:
  uint64_t seed_;
  uint64_t counter_;
};

}  // namespace dass
