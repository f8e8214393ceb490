// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace defas {

/// Deterministic splitmix64 generator. Normal draws use an explicit
/// Box-Muller transform so streams do not depend on libstdc++ internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : base_seed_(seed), state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    // u1 in (0,1] so the log is finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.28318530717958647692 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename Scalar>
  void fill_normal(Scalar* data, size_t n) {
    for (size_t i = 0; i < n; ++i) data[i] = static_cast<Scalar>(normal());
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = next_u64() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Independent child stream; stable under the order child() calls are made
  /// because it derives from the constructor seed, not the current state.
  Rng child(uint64_t stream) const {
    uint64_t z = base_seed_ ^ (0x9E3779B97F4A7C15ULL * (stream + 0x632BE59BD9B4E019ULL));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return Rng(z ^ (z >> 31));
  }

  uint64_t base_seed() const { return base_seed_; }

 private:
  uint64_t base_seed_;
  uint64_t state_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace defas
