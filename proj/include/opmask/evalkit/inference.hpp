#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "opmask/core/geometry.hpp"
#include "opmask/core/tensor.hpp"
#include "opmask/evalkit/detection.hpp"
#include "opmask/opmodel/model.hpp"
#include "opmask/synthdata/scene.hpp"

namespace opmask::eval {

// Ground truth of in-memory scenes with annotation ids numbered as the
// dataset writer numbers them (1-based, scene order then instance order).
inline std::vector<GtInstance> gts_from_scenes(const std::vector<synth::Scene>& scenes) {
  std::vector<GtInstance> out;
  std::int64_t id = 1;
  for (const auto& s : scenes)
    for (const auto& inst : s.instances) out.push_back({id++, s.scene_id, inst.class_id, inst.box, inst.mask});
  return out;
}

// Min-max normalizes a b x b prior, thresholds it and pastes it into `box`
// by nearest-cell lookup. A constant prior gives an empty mask.
template <typename T>
inline BinaryMask prior_to_mask(const T* prior, int b, const Box& box, int H, int W, double threshold = 0.5) {
  BinaryMask m(H, W);
  const auto [lo_it, hi_it] = std::minmax_element(prior, prior + static_cast<std::size_t>(b) * b);
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo) || !(box.width() > 0 && box.height() > 0)) return m;
  std::vector<std::uint8_t> on(static_cast<std::size_t>(b) * b);
  for (std::size_t i = 0; i < on.size(); ++i) on[i] = (double(prior[i]) - lo) / (hi - lo) >= threshold;
  const int y_lo = std::max(0, static_cast<int>(std::ceil(box.y0 - 0.5)));
  const int y_hi = std::min(H - 1, static_cast<int>(std::ceil(box.y1 - 0.5)) - 1);
  const int x_lo = std::max(0, static_cast<int>(std::ceil(box.x0 - 0.5)));
  const int x_hi = std::min(W - 1, static_cast<int>(std::ceil(box.x1 - 0.5)) - 1);
  for (int y = y_lo; y <= y_hi; ++y) {
    const int i = std::clamp(static_cast<int>(std::floor((y + 0.5 - box.y0) / box.height() * b)), 0, b - 1);
    for (int x = x_lo; x <= x_hi; ++x) {
      const int j = std::clamp(static_cast<int>(std::floor((x + 0.5 - box.x0) / box.width() * b)), 0, b - 1);
      if (on[static_cast<std::size_t>(i) * b + j]) m.at(y, x) = 1;
    }
  }
  return m;
}

struct InferenceResult {
  std::vector<Detection> masks;   // mask head output; empty for cls_only
  std::vector<Detection> priors;  // selected prior slice used as a mask
};

// Runs the model on ground-truth boxes. Each RoI whose argmax is a
// foreground class yields one detection of that class, scored by its softmax
// probability; background-argmax RoIs are dropped.
template <typename T>
inline InferenceResult run_inference(nn::Model<T>& model, const std::vector<synth::Scene>& scenes, int batch_size = 8,
                                     double prior_threshold = 0.5) {
  InferenceResult res;
  const auto& cfg = model.config();
  const int L = cfg.num_logits();
  for (std::size_t start = 0; start < scenes.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(scenes.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const Image*> imgs;
    std::vector<nn::RoiRef> rois;
    std::vector<std::int64_t> roi_image;
    for (std::size_t s = start; s < end; ++s) {
      imgs.push_back(&scenes[s].image);
      for (const auto& inst : scenes[s].instances) {
        rois.push_back({static_cast<int>(s - start), inst.box});
        roi_image.push_back(static_cast<std::int64_t>(s));
      }
    }
    if (rois.empty()) continue;
    const auto images = nn::images_to_tensor<T>(imgs);
    const auto out = model.forward(images, rois, nn::Mode::eval);
    const auto probs = cfg.has_mask_head() ? out.mask_probabilities() : Tensor<T>();
    const int S = cfg.mask_out(), b = cfg.box_roi;
    for (std::size_t i = 0; i < out.selection.rois.size(); ++i) {
      const int r = out.selection.rois[i];
      const int k = out.selection.classes[i];
      const auto& scene = scenes[static_cast<std::size_t>(roi_image[static_cast<std::size_t>(r)])];
      const Box& box = rois[static_cast<std::size_t>(r)].box;
      const T* z = out.cls_logits.data() + static_cast<std::size_t>(r) * L;
      double m = z[0], sum = 0;
      for (int c = 1; c < L; ++c) m = std::max(m, double(z[c]));
      for (int c = 0; c < L; ++c) sum += std::exp(double(z[c]) - m);
      const double score = std::exp(double(z[k]) - m) / sum;
      const int H = scene.image.height, W = scene.image.width;
      Detection d{scene.scene_id, k, score, box, {}};
      if (cfg.has_mask_head()) {
        d.mask = paste_mask(probs.data() + i * static_cast<std::size_t>(S) * S, S, box, H, W);
        res.masks.push_back(d);
      }
      d.mask = prior_to_mask(out.prior.data() + i * static_cast<std::size_t>(b) * b, b, box, H, W, prior_threshold);
      res.priors.push_back(std::move(d));
    }
  }
  return res;
}

}  // namespace opmask::eval
