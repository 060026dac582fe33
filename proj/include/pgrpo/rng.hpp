#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace pgrpo {

using Rng = std::mt19937_64;

/// Independent stream for a (seed, a, b, ...) coordinate. Used to give every
/// rollout slot its own generator so parallel and serial rollouts agree.
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> coords) {
  std::vector<std::uint32_t> words;
  words.reserve(2 * (coords.size() + 1));
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto c : coords) push(c);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double gaussian(Rng& rng, double mean, double stddev) {
  if (stddev == 0.0) return mean;
  return std::normal_distribution<double>(mean, stddev)(rng);
}

}  // namespace pgrpo
