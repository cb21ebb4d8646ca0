#pragma once

#include <cstdint>
#include <random>

namespace cam3d {

// Deterministic uniforms on top of mt19937_64. The distribution adaptors in
// <random> are not pinned across standard libraries, so doubles are derived
// from raw engine words: top 53 bits -> [0, 1).
inline double uniform01(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

inline double uniform_in(std::mt19937_64& gen, double lo, double hi) {
  return lo + (hi - lo) * uniform01(gen);
}

// Uniform integer in [0, n) by scaling; fine for the small n used here.
inline int uniform_index(std::mt19937_64& gen, int n) {
  const int i = static_cast<int>(uniform01(gen) * n);
  return i < n ? i : n - 1;
}

}  // namespace cam3d
