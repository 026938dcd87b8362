#ifndef TTLAB_RNG_HPP
#define TTLAB_RNG_HPP

#include <cstdint>
#include <random>

namespace ttlab {

// splitmix64 finalizer; good avalanche, cheap.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Independent substream id for (seed, index). Used to give every test sample
// its own rng so evaluation results do not depend on processing order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return mix64(seed ^ mix64(index + 0x517cc1b727220a95ULL));
}

inline std::mt19937 make_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32)};
  return std::mt19937(seq);
}

inline std::mt19937 make_rng(std::uint64_t seed, std::uint64_t index) {
  return make_rng(derive_seed(seed, index));
}

}  // namespace ttlab

#endif  // TTLAB_RNG_HPP
