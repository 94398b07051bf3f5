#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "opmask/core/error.hpp"
#include "opmask/core/geometry.hpp"

namespace opmask::synth {

enum class Family { disk, rectangle, triangle, ring, star, cross, diamond, crescent };

inline constexpr int kFamilyCount = 8;

inline const char* family_name(Family f) {
  switch (f) {
    case Family::disk: return "disk";
    case Family::rectangle: return "rectangle";
    case Family::triangle: return "triangle";
    case Family::ring: return "ring";
    case Family::star: return "star";
    case Family::cross: return "cross";
    case Family::diamond: return "diamond";
    case Family::crescent: return "crescent";
  }
  return "?";
}

inline Family parse_family(const std::string& name) {
  for (int f = 0; f < kFamilyCount; ++f)
    if (name == family_name(static_cast<Family>(f))) return static_cast<Family>(f);
  throw ConfigError("unknown shape family '" + name + "'");
}

// Fill texture: base colour plus a sinusoidal stripe pattern.
struct Texture {
  std::array<float, 3> color{0.5f, 0.5f, 0.5f};
  float stripe_freq = 0.0f;   // cycles per pixel
  float stripe_angle = 0.0f;  // radians
  float stripe_amp = 0.0f;
};

struct ShapeClass {
  int id = 0;
  std::string name;
  Family family = Family::disk;
  Texture texture;
};

// Geometry of one drawn instance. `radius` is the circumradius; `aspect`
// squashes families that have a second axis.
struct ShapeParams {
  double cx = 0, cy = 0;
  double radius = 1;
  double angle = 0;
  double aspect = 1;
};

namespace detail {

inline bool in_polygon(double x, double y, const std::vector<std::array<double, 2>>& poly) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a[1] > y) != (b[1] > y) &&
        x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0])
      inside = !inside;
  }
  return inside;
}

}  // namespace detail

// Point membership in the shape's own frame (centred, unrotated). u runs along
// the instance's angle, v across it; both in pixels.
inline bool inside_local(Family f, double u, double v, double r, double aspect) {
  const double d = std::hypot(u, v);
  switch (f) {
    case Family::disk:
      return d < r;
    case Family::rectangle:
      return std::abs(u) < r * 0.8 && std::abs(v) < r * 0.8 * aspect;
    case Family::triangle: {
      // Equilateral, circumradius r, one vertex along +u.
      const double a0 = 0.0, a1 = 2.0 * M_PI / 3.0, a2 = 4.0 * M_PI / 3.0;
      const std::vector<std::array<double, 2>> poly{{r * std::cos(a0), r * std::sin(a0)},
                                                    {r * std::cos(a1), r * std::sin(a1)},
                                                    {r * std::cos(a2), r * std::sin(a2)}};
      return detail::in_polygon(u, v, poly);
    }
    case Family::ring:
      return d < r && d > r * 0.55;
    case Family::star: {
      std::vector<std::array<double, 2>> poly;
      for (int k = 0; k < 10; ++k) {
        const double rr = (k % 2 == 0) ? r : r * 0.45;
        const double a = k * M_PI / 5.0;
        poly.push_back({rr * std::cos(a), rr * std::sin(a)});
      }
      return detail::in_polygon(u, v, poly);
    }
    case Family::cross: {
      const double half = r * 0.3;
      return (std::abs(u) < r && std::abs(v) < half) || (std::abs(v) < r && std::abs(u) < half);
    }
    case Family::diamond:
      return std::abs(u) / r + std::abs(v) / (r * 0.7 * aspect) < 1.0;
    case Family::crescent: {
      const double du = u - r * 0.45;
      return d < r && std::hypot(du, v) > r * 0.8;
    }
  }
  return false;
}

// Full (unoccluded) footprint clipped to an H x W grid; pixel centres are
// tested, so membership is a deterministic function of the parameters.
inline BinaryMask rasterize(Family f, const ShapeParams& p, int height, int width) {
  BinaryMask m(height, width);
  const double c = std::cos(p.angle), s = std::sin(p.angle);
  const int x0 = std::max(0, static_cast<int>(std::floor(p.cx - p.radius - 1)));
  const int x1 = std::min(width - 1, static_cast<int>(std::ceil(p.cx + p.radius + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(p.cy - p.radius - 1)));
  const int y1 = std::min(height - 1, static_cast<int>(std::ceil(p.cy + p.radius + 1)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - p.cx, dy = y + 0.5 - p.cy;
      const double u = c * dx + s * dy;
      const double v = -s * dx + c * dy;
      if (inside_local(f, u, v, p.radius, p.aspect)) m.at(y, x) = 1;
    }
  return m;
}

// Default class table: one family per class (cycled beyond eight), each with a
// distinct saturated colour and stripe pattern. `families` reorders the
// family assignment; colours and stripes stay tied to the class id.
inline constexpr int kPaletteSize = 8;

// `num_colors` > 0 makes classes share the first num_colors palette entries;
// shape and stripes still tell them apart.
inline std::vector<ShapeClass> default_classes(int count, const std::vector<Family>& families = {},
                                               int num_colors = 0) {
  static const std::array<std::array<float, 3>, kPaletteSize> colors{{{0.90f, 0.20f, 0.20f},
                                                           {0.20f, 0.75f, 0.25f},
                                                           {0.20f, 0.35f, 0.90f},
                                                           {0.90f, 0.80f, 0.15f},
                                                           {0.80f, 0.25f, 0.80f},
                                                           {0.15f, 0.80f, 0.80f},
                                                           {0.95f, 0.55f, 0.10f},
                                                           {0.55f, 0.30f, 0.10f}}};
  std::vector<ShapeClass> out;
  for (int i = 0; i < count; ++i) {
    ShapeClass sc;
    sc.id = i;
    sc.family = families.empty() ? static_cast<Family>(i % kFamilyCount)
                                 : families[static_cast<std::size_t>(i) % families.size()];
    sc.name = std::string(family_name(sc.family)) +
              (i >= kFamilyCount ? "_" + std::to_string(i / kFamilyCount) : "");
    auto col = colors[static_cast<std::size_t>(i % (num_colors > 0 ? num_colors : kPaletteSize))];
    if (i >= kFamilyCount) {
      // Later cycles rotate the colour channels so textures stay distinct.
      const int shift = (i / kFamilyCount) % 3;
      std::rotate(col.begin(), col.begin() + shift, col.end());
    }
    sc.texture.color = col;
    sc.texture.stripe_freq = 0.12f + 0.04f * static_cast<float>(i % 5);
    sc.texture.stripe_angle = static_cast<float>(M_PI) * static_cast<float>(i % 8) / 8.0f;
    sc.texture.stripe_amp = 0.12f;
    out.push_back(sc);
  }
  return out;
}

}  // namespace opmask::synth
