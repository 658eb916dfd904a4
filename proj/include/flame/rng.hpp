#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace flame {

using Rng = std::mt19937_64;

// Stream tags keep independent consumers from sharing a sequence.
enum class Stream : std::uint64_t {
  data = 1,
  partition = 2,
  selection = 3,
  batches = 4,
  attack = 5,
  init = 6,
  projection = 7,
  poison = 8,
  oracle = 9,
  split = 10,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derives a seed from a base seed and a key path, e.g. (seed, stream, client, round).
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k + 0x632BE59BD9B4E019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t base, Stream stream, std::initializer_list<std::uint64_t> keys = {}) {
  std::uint64_t h = derive_seed(base, {static_cast<std::uint64_t>(stream)});
  for (std::uint64_t k : keys) h = derive_seed(h, {k});
  return Rng(h);
}

}  // namespace flame
