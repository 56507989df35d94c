#pragma once

#include <cmath>
#include <cstdint>

namespace cmf {

/// Counter-style splitmix64 generator. Used everywhere randomness is needed
/// so that streams are reproducible bit-for-bit across platforms (std::
/// distributions are not implementation-pinned) and trivially serializable.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0,1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  /// Standard normal via Box-Muller (one value per call, stateless).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

  /// Derives an independent substream from (seed, tag) without advancing *this.
  static Rng fork(uint64_t seed, uint64_t tag) {
    Rng mix(seed ^ (0x9e3779b97f4a7c15ull * (tag + 1)));
    return Rng(mix.next_u64());
  }

 private:
  uint64_t state_;
};

}  // namespace cmf
