#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

// Deterministic draws on top of std::mt19937_64. The standard pins the
// engine's output sequence but not the distribution adaptors, so every
// distribution used here is spelled out explicitly.

namespace ran {

using Rng = std::mt19937_64;

inline double uniform01(Rng& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform_range(Rng& g, double lo, double hi) {
  return lo + (hi - lo) * uniform01(g);
}

// Modulo draw; the bias is irrelevant at the bounds used here.
inline std::size_t uniform_index(Rng& g, std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  return static_cast<std::size_t>(g() % n);
}

template <typename T>
void shuffle_in_place(Rng& g, std::vector<T>& v) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = uniform_index(g, i);
    std::swap(v[i - 1], v[j]);
  }
}

inline void glorot_uniform_fill(Rng& g, std::vector<double>& out, std::size_t fan_in,
                                std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : out) v = uniform_range(g, -limit, limit);
}

}  // namespace ran
