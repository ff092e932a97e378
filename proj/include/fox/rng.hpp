#ifndef FOX_RNG_HPP_
#define FOX_RNG_HPP_

#include <cstdint>
#include <random>

#include "fox/tensor.hpp"

namespace fox {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream `stream` of a run seeded with `seed`. Every consumer of
// randomness (init, data, each eval suite) takes its own stream so that
// adding draws to one never shifts another.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) { return Rng(derive_seed(seed, stream)); }

template <typename T>
void fill_normal(Matrix<T>& m, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
}

template <typename T>
Matrix<T> random_normal(Index rows, Index cols, Rng& rng, double stddev = 1.0) {
  Matrix<T> m(rows, cols);
  fill_normal(m, rng, stddev);
  return m;
}

template <typename T>
Matrix<T> random_uniform(Index rows, Index cols, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix<T> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  return m;
}

}  // namespace fox

#endif  // FOX_RNG_HPP_
