#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace masred {

// Seeded generator with platform-independent distributions. The standard
// distribution classes are implementation-defined, so all sampling used by
// reproducible artifacts goes through here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [lo, hi] (inclusive).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  // Uniform real in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Derives an independent child stream; used to give each item or
  // generation its own sequence without coupling draw counts.
  Rng fork(std::uint64_t salt);

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// splitmix64 finaliser, used for seed derivation.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace masred
