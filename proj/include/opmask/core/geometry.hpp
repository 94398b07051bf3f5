#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

#include "opmask/core/error.hpp"

namespace opmask {

// Axis-aligned box in pixel coordinates, half-open: a pixel (x, y) covers
// [x, x+1) x [y, y+1), so a tight box of a mask has integer corners.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  bool valid() const { return x1 > x0 && y1 > y0; }

  friend bool operator==(const Box&, const Box&) = default;
};

// Row-major binary grid.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b != 0;
    return n;
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

// Tight bounding box of the foreground, or nullopt for an empty mask.
inline std::optional<Box> tight_box(const BinaryMask& m) {
  int x0 = m.width, y0 = m.height, x1 = -1, y1 = -1;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(y, x)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) return std::nullopt;
  return Box{double(x0), double(y0), double(x1 + 1), double(y1 + 1)};
}

// H x W x 3 image with values in [0, 1], interleaved RGB.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0.0f) {}

  float& at(int y, int x, int ch) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + ch]; }
  float at(int y, int x, int ch) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + ch];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

}  // namespace opmask
