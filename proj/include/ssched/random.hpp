#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include "ssched/core.hpp"

namespace ssched {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to derive independent substreams from a base
/// seed and a tuple of stream coordinates (trial, t, ...), so that results
/// depend only on the coordinates and never on execution order.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> coords) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t c : coords) {
    h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
  }
  return h;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> coords = {}) {
  return Rng(derive_seed(base, coords));
}

/// Uniform integer in [lo, hi] without relying on the (implementation defined)
/// std::uniform_int_distribution, so draws are identical across standard libraries.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t lo, std::uint64_t hi) {
  const std::uint64_t span = hi - lo + 1;
  if (span == 0) return rng();
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return lo + x % span;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal draw (Box-Muller on two uniform_unit draws; no cached
/// second value, so each call consumes exactly two engine outputs).
inline double standard_normal(Rng& rng) {
  double u1 = uniform_unit(rng);
  while (u1 <= 0.0) u1 = uniform_unit(rng);
  const double u2 = uniform_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <typename Scalar>
Vector<Scalar> standard_normal_vector(Rng& rng, Eigen::Index n) {
  Vector<Scalar> v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = Scalar(standard_normal(rng));
  return v;
}

/// `count` distinct elements of `pool` drawn uniformly without replacement
/// (partial Fisher-Yates). Returned in draw order.
template <typename T>
std::vector<T> sample_without_replacement(Rng& rng, std::vector<T> pool, std::size_t count) {
  count = std::min(count, pool.size());
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = static_cast<std::size_t>(uniform_index(rng, i, pool.size() - 1));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

/// Uniform random vector on the sphere of the given radius in R^dim.
template <typename Scalar>
Vector<Scalar> uniform_on_sphere(Rng& rng, Eigen::Index dim, Scalar radius) {
  Vector<Scalar> v;
  Scalar norm = 0;
  do {
    v = standard_normal_vector<Scalar>(rng, dim);
    norm = v.norm();
  } while (norm <= Scalar(0));
  return v * (radius / norm);
}

}  // namespace ssched
