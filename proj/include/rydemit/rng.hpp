#pragma once

#include <cstdint>
#include <random>

#include "rydemit/units.hpp"

// Deterministic randomness.  The engine is std::mt19937_64 (its output
// sequence is fixed by the standard), and every distribution transform is
// written out here rather than taken from <random>, because the standard
// library distributions are free to differ between implementations.

namespace rydemit {

// splitmix64, Vigna's finaliser.  Used both to decorrelate user seeds and to
// derive independent per-stage / per-sample streams from one master seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stream `index` derived from `master`.  Stable contract: the manifest
// records only the master seed, every stage re-derives its own stream.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t s = master;
  (void)splitmix64(s);  // decorrelate small master seeds
  s ^= 0x9e3779b97f4a7c15ULL * (index + 1);
  (void)splitmix64(s);
  return splitmix64(s);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // Uniform in [0, 1).  53-bit mantissa from the top of the 64-bit word.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal, Box-Muller with the second deviate cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // 1-u keeps the argument of log strictly positive.
    double r = std::sqrt(-2.0 * std::log(1.0 - uniform()));
    double phi = units::two_pi * uniform();
    spare_ = r * std::sin(phi);
    have_spare_ = true;
    return r * std::cos(phi);
  }

  std::uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace rydemit
