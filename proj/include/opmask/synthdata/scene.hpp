#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "opmask/core/error.hpp"
#include "opmask/core/geometry.hpp"
#include "opmask/core/rng.hpp"
#include "opmask/synthdata/shapes.hpp"

namespace opmask::synth {

struct Instance {
  int class_id = 0;
  Box box;
  BinaryMask mask;  // modal: visible pixels only

  friend bool operator==(const Instance&, const Instance&) = default;
};

struct Scene {
  Image image;
  std::vector<Instance> instances;
  std::int64_t scene_id = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const Scene&, const Scene&) = default;
};

struct GenConfig {
  int height = 64;
  int width = 64;
  int num_classes = 8;
  int min_instances = 1;
  int max_instances = 5;
  double radius_min = 7.0;
  double radius_max = 13.0;
  // 0 places instances with pairwise disjoint boxes. Larger values attach more
  // instances to an earlier one and shrink the attachment spread.
  double overlap_pressure = 0.0;
  // Per-class multiplier on the attachment probability. Empty = all 1.
  std::vector<double> class_affinity;
  // A new instance is rejected if it would leave an earlier one with less than
  // this fraction of its full footprint visible.
  double min_visible_fraction = 0.35;
  double pixel_noise = 0.03;
  int max_placement_attempts = 40;
  // Family name per class id. Empty = the enum order.
  std::vector<std::string> families;
  // Class i takes palette colour i % num_colors. 0 = one colour per class.
  int num_colors = 0;
  // Per-instance uniform offset in [-j, j] on each colour channel.
  double color_jitter = 0.0;

  double affinity(int class_id) const {
    if (class_affinity.empty()) return 1.0;
    return class_affinity.at(static_cast<std::size_t>(class_id));
  }

  void validate() const {
    if (height < 64 || width < 64)
      throw ConfigError("gen: image size must be at least 64x64, got " +
                        std::to_string(height) + "x" + std::to_string(width));
    if (num_classes < 2) throw ConfigError("gen: need at least 2 classes");
    if (min_instances < 1 || max_instances < min_instances)
      throw ConfigError("gen: instance count range must satisfy 1 <= min <= max");
    if (radius_min <= 0 || radius_max < radius_min)
      throw ConfigError("gen: radius range must satisfy 0 < min <= max");
    if (2.0 * radius_min > std::min(height, width))
      throw ConfigError("gen: smallest shape (diameter " + std::to_string(2.0 * radius_min) +
                        ") does not fit in the image");
    if (overlap_pressure < 0 || overlap_pressure > 1)
      throw ConfigError("gen: overlap_pressure must lie in [0, 1]");
    if (!class_affinity.empty() && static_cast<int>(class_affinity.size()) != num_classes)
      throw ConfigError("gen: class_affinity needs one entry per class");
    if (min_visible_fraction < 0 || min_visible_fraction >= 1)
      throw ConfigError("gen: min_visible_fraction must lie in [0, 1)");
    if (num_colors < 0 || num_colors > kPaletteSize)
      throw ConfigError("gen: num_colors must lie in [0, " + std::to_string(kPaletteSize) + "]");
    if (color_jitter < 0 || color_jitter > 0.5) throw ConfigError("gen: color_jitter must lie in [0, 0.5]");
    if (!families.empty()) {
      if (static_cast<int>(families.size()) != num_classes)
        throw ConfigError("gen: families needs one entry per class");
      std::set<std::string> seen;
      for (const auto& f : families) {
        parse_family(f);
        if (!seen.insert(f).second) throw ConfigError("gen: family '" + f + "' listed twice");
      }
    }
  }
};

inline void to_json(nlohmann::json& j, const GenConfig& c) {
  j = nlohmann::json{{"height", c.height},
                     {"width", c.width},
                     {"num_classes", c.num_classes},
                     {"min_instances", c.min_instances},
                     {"max_instances", c.max_instances},
                     {"radius_min", c.radius_min},
                     {"radius_max", c.radius_max},
                     {"overlap_pressure", c.overlap_pressure},
                     {"class_affinity", c.class_affinity},
                     {"min_visible_fraction", c.min_visible_fraction},
                     {"pixel_noise", c.pixel_noise},
                     {"max_placement_attempts", c.max_placement_attempts},
                     {"families", c.families},
                     {"num_colors", c.num_colors},
                     {"color_jitter", c.color_jitter}};
}

inline void from_json(const nlohmann::json& j, GenConfig& c) {
  GenConfig d;
  c.height = j.value("height", d.height);
  c.width = j.value("width", d.width);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.min_instances = j.value("min_instances", d.min_instances);
  c.max_instances = j.value("max_instances", d.max_instances);
  c.radius_min = j.value("radius_min", d.radius_min);
  c.radius_max = j.value("radius_max", d.radius_max);
  c.overlap_pressure = j.value("overlap_pressure", d.overlap_pressure);
  c.class_affinity = j.value("class_affinity", d.class_affinity);
  c.min_visible_fraction = j.value("min_visible_fraction", d.min_visible_fraction);
  c.pixel_noise = j.value("pixel_noise", d.pixel_noise);
  c.max_placement_attempts = j.value("max_placement_attempts", d.max_placement_attempts);
  c.families = j.value("families", d.families);
  c.num_colors = j.value("num_colors", d.num_colors);
  c.color_jitter = j.value("color_jitter", d.color_jitter);
}

inline std::vector<ShapeClass> class_table(const GenConfig& cfg) {
  std::vector<Family> order;
  for (const auto& f : cfg.families) order.push_back(parse_family(f));
  return default_classes(cfg.num_classes, order, cfg.num_colors);
}

namespace detail {

inline bool boxes_intersect(const Box& a, const Box& b) {
  return std::min(a.x1, b.x1) > std::max(a.x0, b.x0) && std::min(a.y1, b.y1) > std::max(a.y0, b.y0);
}

inline float quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::lround(c * 255.0)) / 255.0f;
}

// Low-saturation background: a grey level with a gentle linear gradient.
inline void paint_background(Image& img, Rng& rng, double noise) {
  const double base = rng.uniform(0.30, 0.60);
  const double gx = rng.uniform(-0.12, 0.12), gy = rng.uniform(-0.12, 0.12);
  const std::array<double, 3> tint{rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04),
                                   rng.uniform(-0.04, 0.04)};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double g = base + gx * (x / double(img.width) - 0.5) + gy * (y / double(img.height) - 0.5);
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = static_cast<float>(g + tint[ch] + rng.normal(0, noise));
    }
}

inline void paint_instance(Image& img, const BinaryMask& full, const Texture& tex, Rng& rng,
                           double noise, double jitter) {
  const double phase = rng.uniform(0, 2 * M_PI);
  const double shade = rng.uniform(-0.08, 0.08);
  std::array<double, 3> color{tex.color[0], tex.color[1], tex.color[2]};
  if (jitter > 0)
    for (auto& c : color) c += rng.uniform(-jitter, jitter);
  const double ca = std::cos(tex.stripe_angle), sa = std::sin(tex.stripe_angle);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (!full.at(y, x)) continue;
      const double t = tex.stripe_amp * std::sin(2 * M_PI * tex.stripe_freq * (x * ca + y * sa) + phase);
      for (int ch = 0; ch < 3; ++ch)
        img.at(y, x, ch) = static_cast<float>(color[ch] + shade + t + rng.normal(0, noise));
    }
}

}  // namespace detail

// Draws one scene. Pure function of (config, seed).
inline Scene generate_scene(const GenConfig& cfg, std::uint64_t seed, std::int64_t scene_id = 0,
                            const std::vector<ShapeClass>* classes = nullptr) {
  cfg.validate();
  const auto table = classes ? *classes : class_table(cfg);
  Rng rng(seed);
  const int H = cfg.height, W = cfg.width;

  Image img(H, W);
  detail::paint_background(img, rng, cfg.pixel_noise);

  struct Placed {
    int class_id;
    ShapeParams params;
    BinaryMask full;
    BinaryMask visible;
    std::size_t full_area;
    Box full_box;
  };
  std::vector<Placed> placed;

  const int target = cfg.min_instances +
                     static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_instances - cfg.min_instances + 1)));
  const double p = cfg.overlap_pressure;
  const double spread = (1.0 - p) * cfg.radius_max * 1.5 + 0.5;

  for (int k = 0; k < target; ++k) {
    const int cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.num_classes)));
    const Family fam = table[static_cast<std::size_t>(cls)].family;
    bool done = false;
    for (int attempt = 0; attempt < cfg.max_placement_attempts && !done; ++attempt) {
      ShapeParams sp;
      sp.radius = rng.uniform(cfg.radius_min, cfg.radius_max);
      sp.angle = rng.uniform(0, 2 * M_PI);
      sp.aspect = rng.uniform(0.6, 1.0);
      const double lo_x = sp.radius, hi_x = W - sp.radius;
      const double lo_y = sp.radius, hi_y = H - sp.radius;
      const bool attach = p > 0 && !placed.empty() && rng.bernoulli(p * cfg.affinity(cls));
      if (attach) {
        const auto& anchor = placed[rng.below(placed.size())].params;
        sp.cx = std::clamp(anchor.cx + rng.normal(0, spread), lo_x, hi_x);
        sp.cy = std::clamp(anchor.cy + rng.normal(0, spread), lo_y, hi_y);
      } else {
        sp.cx = rng.uniform(lo_x, hi_x);
        sp.cy = rng.uniform(lo_y, hi_y);
      }
      BinaryMask full = rasterize(fam, sp, H, W);
      const std::size_t area = full.count();
      if (area == 0) continue;
      const Box fbox = *tight_box(full);
      if (p == 0) {
        const bool clash = std::any_of(placed.begin(), placed.end(), [&](const Placed& q) {
          return detail::boxes_intersect(q.full_box, fbox);
        });
        if (clash) continue;
      }
      // Occlusion check against everything already drawn.
      bool ok = true;
      for (const auto& q : placed) {
        std::size_t remain = 0;
        for (std::size_t i = 0; i < q.visible.bits.size(); ++i)
          remain += q.visible.bits[i] && !full.bits[i];
        if (static_cast<double>(remain) < cfg.min_visible_fraction * static_cast<double>(q.full_area) ||
            remain == 0) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      for (auto& q : placed)
        for (std::size_t i = 0; i < q.visible.bits.size(); ++i)
          if (full.bits[i]) q.visible.bits[i] = 0;
      placed.push_back({cls, sp, full, full, area, fbox});
      done = true;
    }
  }
  if (placed.empty())
    throw ConfigError("gen: could not place any instance with the given configuration");

  Scene scene;
  scene.scene_id = scene_id;
  scene.seed = seed;
  for (const auto& q : placed)
    detail::paint_instance(img, q.full, table[static_cast<std::size_t>(q.class_id)].texture, rng,
                           cfg.pixel_noise, cfg.color_jitter);
  for (auto& v : img.rgb) v = detail::quantize(v);
  scene.image = std::move(img);
  for (auto& q : placed) {
    Instance inst;
    inst.class_id = q.class_id;
    inst.mask = std::move(q.visible);
    inst.box = *tight_box(inst.mask);
    scene.instances.push_back(std::move(inst));
  }
  return scene;
}

}  // namespace opmask::synth
