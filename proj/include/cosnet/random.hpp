#pragma once

// Distributions drawn directly from mt19937_64 output so that streams are
// identical across standard library implementations.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "cosnet/error.hpp"
#include "cosnet/tensor.hpp"

namespace cosnet {

using Rng = std::mt19937_64;

// Uniform in [0, 1).
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Uniform integer in [0, n), rejection sampled to avoid modulo bias.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n == 0) throw UsageError("uniform_index: empty range");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

// Box-Muller; one draw per call, the second variate is discarded.
inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline Tensor random_normal(Shape shape, Rng& rng, double stddev, bool requires_grad = false) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = normal(rng, 0.0, stddev);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline Tensor random_uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = uniform(rng, lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace cosnet
