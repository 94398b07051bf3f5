#pragma once

// Shared test fixtures: a miniature double-precision model and small
// synthetic batches for it.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "opmask/core/rng.hpp"
#include "opmask/opmodel/model.hpp"
#include "opmask/synthdata/class_split.hpp"
#include "opmask/synthdata/scene.hpp"
#include "opmask/trainloop/losses.hpp"
#include "opmask/trainloop/train.hpp"

namespace opmask::testing {

// D=4, C=6, K=3, 4x4 RoIs on both branches.
inline ModelConfig mini_config(Variant v, std::uint64_t init_seed = 1) {
  ModelConfig c;
  c.num_classes = 3;
  c.backbone_channels = {4, 4, 6, 6};
  c.pyramid_channels = 4;
  c.box_roi = 4;
  c.mask_roi = 4;
  c.box_head_channels = 6;
  c.mask_head_channels = 4;
  c.variant = v;
  c.init_seed = init_seed;
  return c;
}

inline synth::GenConfig mini_gen(double pressure = 0.8) {
  synth::GenConfig g;
  g.num_classes = 3;
  g.min_instances = 2;
  g.max_instances = 3;
  g.overlap_pressure = pressure;
  return g;
}

inline const synth::ClassSplit& mini_split() {
  static const synth::ClassSplit s = synth::make_class_split(synth::id_range(3), {0, 1});
  return s;
}

struct MiniBatch {
  std::vector<synth::Scene> scenes;
  Tensor<double> images;
  train::TrainBatch batch;
};

// Two small scenes with proposals; every draw has at least one supervised
// RoI and one weak-class foreground RoI when `need_weak` is set.
inline MiniBatch mini_batch(std::uint64_t seed, bool need_weak = false, int num_images = 2) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    MiniBatch mb;
    Rng rng(derive_seed(seed, attempt));
    std::vector<const synth::Scene*> ptrs;
    for (int i = 0; i < num_images; ++i) mb.scenes.push_back(synth::generate_scene(mini_gen(), rng.next_u64(), i));
    for (const auto& s : mb.scenes) ptrs.push_back(&s);
    train::JitterConfig j;
    j.copies_per_gt = 1;
    j.bg_ratio = 1.0;
    mb.batch = train::build_batch(ptrs, mini_split(), j, 3, 8, rng);
    bool sup = false, weak = false;
    for (std::size_t r = 0; r < mb.batch.rois.size(); ++r) {
      sup = sup || mb.batch.supervised[r];
      weak = weak || mini_split().is_weak(mb.batch.labels[r]);
    }
    if (!sup || (need_weak && !weak)) continue;
    std::vector<const Image*> imgs;
    for (const auto& s : mb.scenes) imgs.push_back(&s.image);
    mb.images = nn::images_to_tensor<double>(imgs);
    return mb;
  }
}

inline train::LossGrads<double> forward_losses(nn::Model<double>& m, const MiniBatch& mb) {
  const bool with_mask = m.config().has_mask_head();
  const auto sel = mb.batch.mask_selection();
  const auto out = m.forward(mb.images, mb.batch.rois, nn::Mode::train, with_mask ? &sel : nullptr);
  return train::compute_losses(out, mb.batch, m.config().num_classes, with_mask);
}

// Loss and freshly accumulated gradients for one batch.
inline double loss_and_grads(nn::Model<double>& m, const MiniBatch& mb) {
  auto g = forward_losses(m, mb);
  m.zero_grad();
  m.backward(g.d_cls, g.d_deltas, g.d_mask);
  return g.losses.total;
}

// Zero-initialized biases put ReLU inputs exactly on the kink wherever a
// conv sees all-zero input; small random biases move away from it.
inline void randomize_biases(nn::Model<double>& m, std::uint64_t seed) {
  Rng rng(seed);
  for (auto* p : m.params())
    if (p->name.ends_with(".bias") || p->name.ends_with(".beta"))
      for (auto& v : p->value.vec()) v = rng.normal(0.0, 0.1);
}

// Relative error ||a - n|| / max(||a||, ||n||, floor) per parameter group,
// with n from central differences; eps scales with the group's magnitude.
// The floor covers groups whose exact gradient is zero (conv biases feeding
// batch norm), where both sides are pure rounding noise.
inline std::map<std::string, double> finite_difference_errors(nn::Model<double>& m, const MiniBatch& mb,
                                                              double floor = 1e-6) {
  loss_and_grads(m, mb);
  std::map<std::string, std::vector<double>> analytic;
  for (auto* p : m.params()) analytic[p->name] = p->grad.vec();
  std::map<std::string, double> err;
  for (auto* p : m.params()) {
    double rms = 0;
    for (double v : p->value.vec()) rms += v * v;
    rms = std::sqrt(rms / double(p->value.size()));
    const double eps = 1e-6 * std::max(1.0, rms);
    const auto& a = analytic[p->name];
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double w = p->value[i];
      p->value[i] = w + eps;
      const double lp = forward_losses(m, mb).losses.total;
      p->value[i] = w - eps;
      const double lm = forward_losses(m, mb).losses.total;
      p->value[i] = w;
      const double num = (lp - lm) / (2 * eps);
      diff += (num - a[i]) * (num - a[i]);
      na += a[i] * a[i];
      nn += num * num;
    }
    err[p->name] = std::sqrt(diff) / std::max(std::sqrt(std::max(na, nn)), floor);
  }
  return err;
}

}  // namespace opmask::testing
