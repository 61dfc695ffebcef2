#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "planforge/core/hash.hpp"

namespace planforge::toyvlm {

/// Per-block binary keep-masks over MLP intermediate neurons (1 = keep).
/// An empty MaskSet means "no masking".
struct MaskSet {
  std::vector<std::vector<std::uint8_t>> blocks;

  static MaskSet full(std::size_t n_blocks, std::size_t width) {
    return MaskSet{std::vector<std::vector<std::uint8_t>>(n_blocks, std::vector<std::uint8_t>(width, 1))};
  }

  bool empty() const noexcept { return blocks.empty(); }

  std::size_t zeros(std::size_t block) const {
    std::size_t n = 0;
    for (auto m : blocks.at(block)) n += (m == 0);
    return n;
  }

  std::size_t total_zeros() const {
    std::size_t n = 0;
    for (std::size_t b = 0; b < blocks.size(); ++b) n += zeros(b);
    return n;
  }

  std::size_t total_neurons() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.size();
    return n;
  }

  /// FNV-1a over block sizes and bits; stable across runs and platforms.
  std::uint64_t checksum() const {
    Fnv1a f;
    for (const auto& b : blocks) {
      f.word(b.size());
      for (auto m : b) f.byte(m);
    }
    return f.h;
  }

  bool operator==(const MaskSet&) const = default;
};

}  // namespace planforge::toyvlm
