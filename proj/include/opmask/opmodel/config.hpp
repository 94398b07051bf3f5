#pragma once

#include <array>
#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "opmask/core/error.hpp"

namespace opmask {

// opmask: CAM prior injected into the mask branch (mask gradients reach the box head).
// baseline: class-agnostic mask head on plain RoI features.
// cls_only: box head only, no mask branch.
enum class Variant { opmask, baseline, cls_only };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::opmask: return "opmask";
    case Variant::baseline: return "baseline";
    case Variant::cls_only: return "cls_only";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "opmask") return Variant::opmask;
  if (s == "baseline") return Variant::baseline;
  if (s == "cls_only") return Variant::cls_only;
  throw ConfigError("unknown variant '" + s + "' (expected opmask, baseline or cls_only)");
}

struct ModelConfig {
  int num_classes = 8;  // foreground classes; background is index num_classes
  std::array<int, 4> backbone_channels{16, 32, 48, 64};  // strides 2, 4, 8, 16
  int pyramid_channels = 32;
  int box_roi = 7;
  int mask_roi = 14;
  int box_head_channels = 32;
  int mask_head_channels = 32;
  double roi_level_base = 24.0;
  Variant variant = Variant::opmask;
  std::uint64_t init_seed = 1;

  int background() const { return num_classes; }
  int num_logits() const { return num_classes + 1; }
  int mask_out() const { return 2 * mask_roi; }
  bool has_mask_head() const { return variant != Variant::cls_only; }

  void validate() const {
    if (num_classes < 1) throw ConfigError("model: num_classes must be positive");
    if (box_roi < 1 || mask_roi < 1) throw ConfigError("model: RoI sizes must be positive");
    for (int c : backbone_channels)
      if (c < 1) throw ConfigError("model: backbone widths must be positive");
    if (pyramid_channels < 1 || box_head_channels < 1 || mask_head_channels < 1)
      throw ConfigError("model: channel counts must be positive");
    if (roi_level_base <= 0) throw ConfigError("model: roi_level_base must be positive");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"num_classes", c.num_classes},
                     {"backbone_channels", c.backbone_channels},
                     {"pyramid_channels", c.pyramid_channels},
                     {"box_roi", c.box_roi},
                     {"mask_roi", c.mask_roi},
                     {"box_head_channels", c.box_head_channels},
                     {"mask_head_channels", c.mask_head_channels},
                     {"roi_level_base", c.roi_level_base},
                     {"variant", variant_name(c.variant)},
                     {"init_seed", c.init_seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.num_classes = j.value("num_classes", d.num_classes);
  c.backbone_channels = j.value("backbone_channels", d.backbone_channels);
  c.pyramid_channels = j.value("pyramid_channels", d.pyramid_channels);
  c.box_roi = j.value("box_roi", d.box_roi);
  c.mask_roi = j.value("mask_roi", d.mask_roi);
  c.box_head_channels = j.value("box_head_channels", d.box_head_channels);
  c.mask_head_channels = j.value("mask_head_channels", d.mask_head_channels);
  c.roi_level_base = j.value("roi_level_base", d.roi_level_base);
  c.variant = parse_variant(j.value("variant", std::string(variant_name(d.variant))));
  c.init_seed = j.value("init_seed", d.init_seed);
}

}  // namespace opmask
