#pragma once

#include <cstdint>
#include <string_view>

namespace planforge {

/// Incremental 64-bit FNV-1a.
struct Fnv1a {
  static constexpr std::uint64_t kOffset = 14695981039346656037ULL;
  static constexpr std::uint64_t kPrime = 1099511628211ULL;

  std::uint64_t h = kOffset;

  void byte(unsigned char b) {
    h ^= b;
    h *= kPrime;
  }

  /// Little-endian bytes of a 64-bit word.
  void word(std::uint64_t v) {
    for (int s = 0; s < 64; s += 8) byte(static_cast<unsigned char>((v >> s) & 0xffU));
  }

  void bytes(std::string_view s) {
    for (unsigned char c : s) byte(c);
  }
};

inline std::uint64_t fnv1a64(std::string_view s) {
  Fnv1a f;
  f.bytes(s);
  return f.h;
}

}  // namespace planforge
