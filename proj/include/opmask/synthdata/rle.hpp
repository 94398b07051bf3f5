#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "opmask/core/error.hpp"
#include "opmask/core/geometry.hpp"

namespace opmask::synth {

// COCO-style uncompressed RLE: column-major scan, alternating run lengths,
// the first run counts zeros (and may be 0).
inline std::vector<std::uint32_t> encode_rle(const BinaryMask& m) {
  std::vector<std::uint32_t> counts;
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (int x = 0; x < m.width; ++x)
    for (int y = 0; y < m.height; ++y) {
      const std::uint8_t v = m.at(y, x) ? 1 : 0;
      if (v != current) {
        counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  counts.push_back(run);
  return counts;
}

inline BinaryMask decode_rle(const std::vector<std::uint32_t>& counts, int height, int width) {
  if (height < 0 || width < 0) throw FormatError("rle: negative size");
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  const std::uint64_t expected = static_cast<std::uint64_t>(height) * static_cast<std::uint64_t>(width);
  if (total != expected)
    throw FormatError("rle: counts sum to " + std::to_string(total) + ", expected " +
                      std::to_string(expected));
  BinaryMask m(height, width);
  std::uint64_t pos = 0;
  std::uint8_t v = 0;
  for (auto c : counts) {
    for (std::uint32_t i = 0; i < c; ++i, ++pos) {
      if (v) {
        const int x = static_cast<int>(pos / static_cast<std::uint64_t>(height));
        const int y = static_cast<int>(pos % static_cast<std::uint64_t>(height));
        m.at(y, x) = 1;
      }
    }
    v ^= 1;
  }
  return m;
}

}  // namespace opmask::synth
