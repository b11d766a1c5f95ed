#pragma once

#include <cstdint>
#include <random>

#include "deari/array.hpp"

namespace deari {

/// Deterministic sub-seed derivation (splitmix64 over seed and stream tag),
/// so independent consumers never share a stream.
uint64_t derive_seed(uint64_t seed, uint64_t stream);

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  real uniform(real lo, real hi) {
    std::uniform_real_distribution<real> d(lo, hi);
    return d(gen_);
  }
  real normal() {
    std::normal_distribution<real> d(real(0), real(1));
    return d(gen_);
  }
  /// Uniform integer in [0, n).
  int64_t index(int64_t n) {
    std::uniform_int_distribution<int64_t> d(0, n - 1);
    return d(gen_);
  }
  void fill_uniform(Array& a, real lo, real hi) {
    for (int64_t i = 0; i < a.numel(); ++i) a[i] = uniform(lo, hi);
  }
  void fill_normal(Array& a) {
    for (int64_t i = 0; i < a.numel(); ++i) a[i] = normal();
  }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace deari
