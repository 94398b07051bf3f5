#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "opmask/core/geometry.hpp"
#include "opmask/core/rng.hpp"
#include "opmask/evalkit/iou.hpp"
#include "opmask/synthdata/class_split.hpp"
#include "opmask/synthdata/scene.hpp"

namespace opmask::train {

struct JitterConfig {
  int copies_per_gt = 2;     // jittered proposals per ground-truth box
  bool include_gt = true;    // the exact GT box is always a proposal too
  double shift_sigma = 0.08;  // centre shift, fraction of box size
  double scale_sigma = 0.10;  // log-scale noise on width and height
  double bg_ratio = 3.0;      // background RoIs per foreground RoI
  double fg_iou = 0.5;
  int max_fg_per_image = 12;
};

inline void to_json(nlohmann::json& j, const JitterConfig& c) {
  j = nlohmann::json{{"copies_per_gt", c.copies_per_gt}, {"include_gt", c.include_gt},
                     {"shift_sigma", c.shift_sigma},     {"scale_sigma", c.scale_sigma},
                     {"bg_ratio", c.bg_ratio},           {"fg_iou", c.fg_iou},
                     {"max_fg_per_image", c.max_fg_per_image}};
}

inline void from_json(const nlohmann::json& j, JitterConfig& c) {
  JitterConfig d;
  c.copies_per_gt = j.value("copies_per_gt", d.copies_per_gt);
  c.include_gt = j.value("include_gt", d.include_gt);
  c.shift_sigma = j.value("shift_sigma", d.shift_sigma);
  c.scale_sigma = j.value("scale_sigma", d.scale_sigma);
  c.bg_ratio = j.value("bg_ratio", d.bg_ratio);
  c.fg_iou = j.value("fg_iou", d.fg_iou);
  c.max_fg_per_image = j.value("max_fg_per_image", d.max_fg_per_image);
}

inline constexpr std::array<double, 4> kBoxCodingWeights{10.0, 10.0, 5.0, 5.0};

// Standard (dx, dy, dw, dh) encoding of `gt` relative to `proposal`.
inline std::array<double, 4> encode_box(const Box& proposal, const Box& gt) {
  const auto& w = kBoxCodingWeights;
  return {w[0] * (gt.cx() - proposal.cx()) / proposal.width(),
          w[1] * (gt.cy() - proposal.cy()) / proposal.height(),
          w[2] * std::log(gt.width() / proposal.width()),
          w[3] * std::log(gt.height() / proposal.height())};
}

inline Box decode_box(const Box& proposal, const std::array<double, 4>& d) {
  const auto& w = kBoxCodingWeights;
  const double cx = proposal.cx() + d[0] / w[0] * proposal.width();
  const double cy = proposal.cy() + d[1] / w[1] * proposal.height();
  const double bw = proposal.width() * std::exp(d[2] / w[2]);
  const double bh = proposal.height() * std::exp(d[3] / w[3]);
  return {cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2};
}

// Proposals for one image with their matching results. Mask targets and
// supervision flags are filled in by make_mask_targets.
struct RoIBatch {
  std::vector<Box> proposals;
  std::vector<int> matched_gt;  // instance index, -1 for background
  std::vector<int> labels;      // class id, background = K
  std::vector<std::array<double, 4>> reg_targets;
  std::vector<BinaryMask> mask_targets;  // out x out, one per RoI (empty grid for background)
  std::vector<bool> supervised;          // label is strong and RoI is foreground

  std::size_t size() const { return proposals.size(); }
};

inline Box clip_box(const Box& b, int height, int width) {
  return {std::clamp(b.x0, 0.0, double(width)), std::clamp(b.y0, 0.0, double(height)),
          std::clamp(b.x1, 0.0, double(width)), std::clamp(b.y1, 0.0, double(height))};
}

// Assigns each proposal to the ground truth of highest box IoU; IoU >= fg_iou
// makes it foreground with that instance's class, anything else background.
inline void match_proposals(RoIBatch& batch, const synth::Scene& scene, int num_classes, double fg_iou) {
  batch.matched_gt.assign(batch.size(), -1);
  batch.labels.assign(batch.size(), num_classes);
  batch.reg_targets.assign(batch.size(), {0, 0, 0, 0});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double best = -1;
    int arg = -1;
    for (std::size_t g = 0; g < scene.instances.size(); ++g) {
      const double iou = eval::box_iou(batch.proposals[i], scene.instances[g].box);
      if (iou > best) {
        best = iou;
        arg = static_cast<int>(g);
      }
    }
    if (arg >= 0 && best >= fg_iou) {
      batch.matched_gt[i] = arg;
      batch.labels[i] = scene.instances[static_cast<std::size_t>(arg)].class_id;
      batch.reg_targets[i] = encode_box(batch.proposals[i], scene.instances[static_cast<std::size_t>(arg)].box);
    }
  }
}

inline RoIBatch sample_proposals(const synth::Scene& scene, const JitterConfig& cfg, int num_classes, Rng& rng) {
  const int H = scene.image.height, W = scene.image.width;
  std::vector<Box> fg_candidates;
  for (const auto& inst : scene.instances) {
    if (cfg.include_gt) fg_candidates.push_back(inst.box);
    for (int c = 0; c < cfg.copies_per_gt; ++c) {
      const Box& g = inst.box;
      const double cx = g.cx() + rng.normal(0, cfg.shift_sigma) * g.width();
      const double cy = g.cy() + rng.normal(0, cfg.shift_sigma) * g.height();
      const double w = g.width() * std::exp(rng.normal(0, cfg.scale_sigma));
      const double h = g.height() * std::exp(rng.normal(0, cfg.scale_sigma));
      const Box b = clip_box({cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}, H, W);
      if (b.width() >= 2 && b.height() >= 2) fg_candidates.push_back(b);
    }
  }

  RoIBatch batch;
  batch.proposals = fg_candidates;
  match_proposals(batch, scene, num_classes, cfg.fg_iou);
  std::vector<Box> fg, bg;
  for (std::size_t i = 0; i < batch.size(); ++i)
    (batch.labels[i] != num_classes ? fg : bg).push_back(batch.proposals[i]);
  if (static_cast<int>(fg.size()) > cfg.max_fg_per_image) {
    rng.shuffle(fg.begin(), fg.end());
    fg.resize(static_cast<std::size_t>(cfg.max_fg_per_image));
  }

  // Random boxes of object-like size; only those that end up background count.
  const int want_bg = static_cast<int>(std::lround(cfg.bg_ratio * static_cast<double>(std::max<std::size_t>(fg.size(), 1))));
  if (cfg.bg_ratio > 0) {
    double smin = 1e9, smax = 0;
    for (const auto& inst : scene.instances) {
      smin = std::min({smin, inst.box.width(), inst.box.height()});
      smax = std::max({smax, inst.box.width(), inst.box.height()});
    }
    smin = std::max(4.0, smin * 0.7);
    smax = std::max(smin + 1, smax * 1.3);
    for (int tries = 0; static_cast<int>(bg.size()) < want_bg && tries < want_bg * 20; ++tries) {
      const double w = rng.uniform(smin, smax), h = rng.uniform(smin, smax);
      const double x0 = rng.uniform(0, std::max(1.0, W - w)), y0 = rng.uniform(0, std::max(1.0, H - h));
      const Box b = clip_box({x0, y0, x0 + w, y0 + h}, H, W);
      if (b.width() < 2 || b.height() < 2) continue;
      double best = 0;
      for (const auto& inst : scene.instances) best = std::max(best, eval::box_iou(b, inst.box));
      if (best < cfg.fg_iou) bg.push_back(b);
    }
  }
  if (static_cast<int>(bg.size()) > want_bg) bg.resize(static_cast<std::size_t>(want_bg));

  RoIBatch out;
  out.proposals = fg;
  out.proposals.insert(out.proposals.end(), bg.begin(), bg.end());
  match_proposals(out, scene, num_classes, cfg.fg_iou);
  return out;
}

}  // namespace opmask::train
