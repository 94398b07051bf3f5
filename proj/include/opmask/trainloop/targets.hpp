#pragma once

#include <cmath>
#include <vector>

#include "opmask/core/geometry.hpp"
#include "opmask/synthdata/class_split.hpp"
#include "opmask/synthdata/scene.hpp"
#include "opmask/trainloop/proposals.hpp"

namespace opmask::train {

// Bilinear read of a binary mask at pixel-index coordinates, zero outside.
inline double mask_value_at(const BinaryMask& m, double y, double x) {
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const double ly = y - y0, lx = x - x0;
  auto px = [&](int yy, int xx) -> double {
    if (yy < 0 || yy >= m.height || xx < 0 || xx >= m.width) return 0.0;
    return m.at(yy, xx) ? 1.0 : 0.0;
  };
  return (1 - ly) * (1 - lx) * px(y0, x0) + (1 - ly) * lx * px(y0, x0 + 1) + ly * (1 - lx) * px(y0 + 1, x0) +
         ly * lx * px(y0 + 1, x0 + 1);
}

// Crops `mask` to `box`, resamples to out x out at cell centres and
// thresholds at 0.5.
inline BinaryMask crop_resample_mask(const BinaryMask& mask, const Box& box, int out) {
  BinaryMask t(out, out);
  const double ch = box.height() / out, cw = box.width() / out;
  for (int i = 0; i < out; ++i) {
    const double y = box.y0 + (i + 0.5) * ch - 0.5;
    for (int j = 0; j < out; ++j) {
      const double x = box.x0 + (j + 0.5) * cw - 0.5;
      t.at(i, j) = mask_value_at(mask, y, x) >= 0.5 ? 1 : 0;
    }
  }
  return t;
}

// Fills mask targets for foreground RoIs and the supervision flags. Only
// foreground RoIs of strong classes are supervised; everything else keeps an
// empty target that no loss reads.
inline void make_mask_targets(const synth::Scene& scene, const synth::ClassSplit& split, RoIBatch& batch,
                              int out) {
  batch.mask_targets.assign(batch.size(), BinaryMask{});
  batch.supervised.assign(batch.size(), false);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int g = batch.matched_gt[i];
    if (g < 0) continue;
    const auto& inst = scene.instances[static_cast<std::size_t>(g)];
    batch.mask_targets[i] = crop_resample_mask(inst.mask, batch.proposals[i], out);
    batch.supervised[i] = split.is_strong(batch.labels[i]);
  }
}

}  // namespace opmask::train
