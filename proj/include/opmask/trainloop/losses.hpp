#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "opmask/core/error.hpp"
#include "opmask/core/geometry.hpp"
#include "opmask/core/tensor.hpp"
#include "opmask/opmodel/model.hpp"
#include "opmask/opmodel/roi_align.hpp"
#include "opmask/trainloop/proposals.hpp"

namespace opmask::train {

// RoIs of several images flattened into one list, as the model consumes them.
struct TrainBatch {
  std::vector<nn::RoiRef> rois;
  std::vector<int> labels;
  std::vector<std::array<double, 4>> reg_targets;
  std::vector<BinaryMask> mask_targets;
  std::vector<bool> supervised;

  void append(int image, const RoIBatch& b) {
    for (std::size_t i = 0; i < b.size(); ++i) {
      rois.push_back({image, b.proposals[i]});
      labels.push_back(b.labels[i]);
      reg_targets.push_back(b.reg_targets[i]);
      mask_targets.push_back(b.mask_targets.empty() ? BinaryMask{} : b.mask_targets[i]);
      supervised.push_back(!b.supervised.empty() && b.supervised[i]);
    }
  }

  // Only supervised RoIs enter the mask branch during training, with their
  // ground-truth class selecting the prior slice.
  nn::MaskSelection mask_selection() const {
    nn::MaskSelection s;
    for (std::size_t i = 0; i < rois.size(); ++i)
      if (supervised[i]) {
        s.rois.push_back(static_cast<int>(i));
        s.classes.push_back(labels[i]);
      }
    return s;
  }
};

struct LossBreakdown {
  double l_cls = 0;
  double l_box = 0;
  double l_mask = 0;
  double total = 0;
  long iteration = 0;
  double lr = 0;
  double grad_norm_pre = 0;
  double grad_norm_post = 0;
};

template <typename T>
struct LossGrads {
  LossBreakdown losses;
  Tensor<T> d_cls;
  Tensor<T> d_deltas;
  Tensor<T> d_mask;
};

inline double smooth_l1(double d, double beta = 1.0) {
  const double a = std::abs(d);
  return a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
}

inline double smooth_l1_grad(double d, double beta = 1.0) {
  const double a = std::abs(d);
  if (a < beta) return d / beta;
  return d > 0 ? 1.0 : -1.0;
}

// Numerically stable BCE on a logit.
inline double bce_with_logit(double x, double target) {
  return std::max(x, 0.0) - x * target + std::log1p(std::exp(-std::abs(x)));
}

// L_cls: softmax cross-entropy averaged over all sampled RoIs.
// L_box: smooth-L1 over foreground RoIs, normalized by the sampled RoI count.
// L_mask: per-pixel BCE averaged per RoI, then over supervised RoIs (0 if none).
template <typename T>
inline LossGrads<T> compute_losses(const nn::ModelOutput<T>& out, const TrainBatch& batch, int num_classes,
                                   bool with_mask) {
  const int R = static_cast<int>(batch.rois.size());
  const int L = num_classes + 1;
  if (out.cls_logits.rank() != 2 || out.cls_logits.dim(0) != R || out.cls_logits.dim(1) != L ||
      out.box_deltas.dim(0) != R)
    throw ShapeError("compute_losses: model outputs do not match the batch (" + out.cls_logits.shape_string() +
                     " logits for " + std::to_string(R) + " RoIs)");
  LossGrads<T> g;
  g.d_cls = Tensor<T>(out.cls_logits.shape());
  g.d_deltas = Tensor<T>(out.box_deltas.shape());
  const double inv_r = R > 0 ? 1.0 / R : 0.0;

  double l_cls = 0, l_box = 0;
  for (int r = 0; r < R; ++r) {
    const int label = batch.labels[static_cast<std::size_t>(r)];
    const T* z = out.cls_logits.data() + static_cast<std::size_t>(r) * L;
    double m = z[0];
    for (int k = 1; k < L; ++k) m = std::max(m, double(z[k]));
    double s = 0;
    for (int k = 0; k < L; ++k) s += std::exp(double(z[k]) - m);
    const double lse = m + std::log(s);
    l_cls += lse - double(z[label]);
    for (int k = 0; k < L; ++k) {
      const double p = std::exp(double(z[k]) - lse);
      g.d_cls.at(r, k) = static_cast<T>((p - (k == label ? 1.0 : 0.0)) * inv_r);
    }
    if (label != num_classes) {
      for (int c = 0; c < 4; ++c) {
        const double d = double(out.box_deltas.at(r, c)) - batch.reg_targets[static_cast<std::size_t>(r)][c];
        l_box += smooth_l1(d);
        g.d_deltas.at(r, c) = static_cast<T>(smooth_l1_grad(d) * inv_r);
      }
    }
  }
  g.losses.l_cls = l_cls * inv_r;
  g.losses.l_box = l_box * inv_r;

  if (with_mask) {
    const auto sel = batch.mask_selection();
    const int Rm = static_cast<int>(sel.rois.size());
    if (out.selection.rois != sel.rois || out.mask_logits.rank() != 4 || out.mask_logits.n() != Rm)
      throw ShapeError("compute_losses: mask logits are not aligned with the supervised RoIs");
    g.d_mask = Tensor<T>(out.mask_logits.shape());
    if (Rm > 0) {
      const int S = out.mask_logits.h();
      const int P = S * S;
      double l_mask = 0;
      const double scale = 1.0 / (static_cast<double>(Rm) * P);
      for (int i = 0; i < Rm; ++i) {
        const auto& tgt = batch.mask_targets[static_cast<std::size_t>(sel.rois[static_cast<std::size_t>(i)])];
        if (tgt.height != S || tgt.width != S)
          throw ShapeError("compute_losses: mask target is not " + std::to_string(S) + "x" + std::to_string(S));
        const T* x = out.mask_logits.data() + static_cast<std::size_t>(i) * P;
        T* dx = g.d_mask.data() + static_cast<std::size_t>(i) * P;
        for (int p = 0; p < P; ++p) {
          const double t = tgt.bits[static_cast<std::size_t>(p)] ? 1.0 : 0.0;
          const double v = double(x[p]);
          l_mask += bce_with_logit(v, t);
          dx[p] = static_cast<T>((1.0 / (1.0 + std::exp(-v)) - t) * scale);
        }
      }
      g.losses.l_mask = l_mask * scale;
    }
  }
  g.losses.total = g.losses.l_cls + g.losses.l_box + g.losses.l_mask;
  return g;
}

}  // namespace opmask::train
