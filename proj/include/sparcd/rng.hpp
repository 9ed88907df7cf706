#pragma once

#include <cstdint>
#include <iterator>
#include <random>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

namespace sparcd {

// Engines are std::mt19937_64 (fully specified by the standard); distributions
// come from Boost.Random, whose algorithms are fixed across platforms, unlike
// the implementation-defined std:: distributions.
using Engine = std::mt19937_64;

// Named streams. Every random draw in the library comes from an engine seeded by
// (master seed, stream, index), so results never depend on execution order.
enum class Stream : std::uint64_t {
  permutation = 1,
  sim_parameters = 2,
  sim_x = 3,
  sim_y = 4,
  sim_hybrid_linear = 5,
  sim_hybrid_nonlinear = 6,
  sim_hybrid_noise_x = 7,
  sim_hybrid_noise_y = 8,
  benchmark = 9,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t index = 0) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  return splitmix64(h ^ splitmix64(index));
}

inline Engine make_engine(std::uint64_t master, Stream stream, std::uint64_t index = 0) {
  return Engine(derive_seed(master, stream, index));
}

inline double standard_normal(Engine& rng) {
  boost::random::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline double uniform_real(Engine& rng, double lo, double hi) {
  boost::random::uniform_real_distribution<double> dist(lo, hi);
  return dist(rng);
}

// Uniform integer in [0, bound).
inline std::size_t uniform_index(Engine& rng, std::size_t bound) {
  boost::random::uniform_int_distribution<std::size_t> dist(0, bound - 1);
  return dist(rng);
}

inline bool coin_flip(Engine& rng) { return uniform_index(rng, 2) == 1; }

// Fisher-Yates with the portable integer distribution above.
template <typename Range>
void shuffle(Range& range, Engine& rng) {
  using std::swap;
  const auto size = static_cast<std::size_t>(std::size(range));
  for (std::size_t i = size; i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    swap(range[i - 1], range[j]);
  }
}

}  // namespace sparcd
