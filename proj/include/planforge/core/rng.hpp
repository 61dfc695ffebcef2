#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace planforge {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent child seed for (base, tags...), e.g. (run seed, episode, member).
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix64(base);
  for (auto t : tags) h = splitmix64(h ^ splitmix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

inline std::mt19937_64 make_stream(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  return std::mt19937_64(derive_seed(base, tags));
}

}  // namespace planforge
