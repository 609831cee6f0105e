#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>

namespace hyperrecon {

using Rng = std::mt19937_64;

// Seeds a generator from several integers (e.g. run seed and step index) so that
// independent streams can be re-derived without storing generator state.
inline Rng make_rng(std::initializer_list<std::uint64_t> keys) {
  std::seed_seq seq(keys.begin(), keys.end());
  return Rng(seq);
}

// Uniform on [0, 1) with 53 random bits; independent of the standard library's
// distribution implementations so streams are portable.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace hyperrecon
