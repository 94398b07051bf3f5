#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "opmask/core/error.hpp"
#include "opmask/core/rng.hpp"
#include "opmask/core/tensor.hpp"
#include "opmask/opmodel/backbone.hpp"
#include "opmask/opmodel/config.hpp"
#include "opmask/opmodel/heads.hpp"
#include "opmask/opmodel/layers.hpp"
#include "opmask/opmodel/prior.hpp"
#include "opmask/opmodel/roi_align.hpp"

namespace opmask::nn {

enum class PriorSource { gt_label, predicted };

// RoIs that enter the mask branch together with the class whose CAM slice
// is used as their prior. Indices refer to the RoI list given to forward().
struct MaskSelection {
  std::vector<int> rois;
  std::vector<int> classes;
};

template <typename T>
struct ModelOutput {
  Tensor<T> cls_logits;  // [R,K+1]
  Tensor<T> box_deltas;  // [R,4]
  Tensor<T> cam;         // [R,K+1,b,b] all-class activation maps
  MaskSelection selection;
  PriorSource source = PriorSource::predicted;
  Tensor<T> prior;        // [Rm,1,b,b] selected slices
  Tensor<T> mask_logits;  // [Rm,1,2m,2m]; empty without a mask head

  Tensor<T> mask_probabilities() const {
    Tensor<T> p = mask_logits;
    for (auto& v : p.vec()) v = T{1} / (T{1} + std::exp(-v));
    return p;
  }
};

template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg), backbone_(cfg), box_head_(cfg) {
    cfg_.validate();
    if (cfg_.has_mask_head()) mask_head_.emplace(cfg_);
    Rng rng(cfg_.init_seed);
    backbone_.init(rng);
    box_head_.init(rng);
    if (mask_head_) mask_head_->init(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  Backbone<T>& backbone() { return backbone_; }
  BoxHead<T>& box_head() { return box_head_; }
  const Tensor<T>& classifier_weight() const { return box_head_.classifier().weight().value; }
  const Tensor<T>& classifier_bias() const { return box_head_.classifier().bias().value; }

  // Without `gt`, classes come from the argmax of the box head and RoIs whose
  // argmax is background are left out of the mask branch.
  ModelOutput<T> forward(const Tensor<T>& images, const std::vector<RoiRef>& rois, Mode mode,
                         const MaskSelection* gt = nullptr) {
    ModelOutput<T> out;
    if (gt && !gt->rois.empty() && !cfg_.has_mask_head())
      throw ConfigError("cls_only variant has no mask head; masks cannot be requested");
    if (gt && gt->rois.size() != gt->classes.size())
      throw ShapeError("mask selection: one class per RoI required");

    pyramid_shapes_ = {};
    auto pyr = backbone_.forward(images);
    for (int l = 0; l < 3; ++l) pyramid_shapes_[l] = pyr.levels[l].shape();

    rois_ = rois;
    const Tensor<T> box_feats = gather_rois(pyr, rois_, cfg_.box_roi, box_levels_);
    auto bh = box_head_.forward(box_feats);
    f_box_ = bh.f_box;
    out.cls_logits = bh.cls_logits;
    out.box_deltas = bh.box_deltas;
    out.cam = compute_cam(bh.f_box, classifier_weight());

    if (gt) {
      out.selection = *gt;
      out.source = PriorSource::gt_label;
    } else {
      const int L = cfg_.num_logits();
      for (int r = 0; r < static_cast<int>(rois.size()); ++r)
        if (auto k = predicted_prior_class(out.cls_logits.data() + static_cast<std::size_t>(r) * L, L,
                                           cfg_.background())) {
          out.selection.rois.push_back(r);
          out.selection.classes.push_back(*k);
        }
      out.source = PriorSource::predicted;
    }
    for (int k : out.selection.classes)
      if (k < 0 || k >= cfg_.num_classes) throw ShapeError("mask selection: class id out of range");
    for (int r : out.selection.rois)
      if (r < 0 || r >= static_cast<int>(rois.size())) throw ShapeError("mask selection: RoI index out of range");

    selection_ = out.selection;
    out.prior = gather_prior(out.cam, selection_);

    mask_ran_ = false;
    if (mask_head_ && !selection_.rois.empty()) {
      mask_rois_.clear();
      for (int r : selection_.rois) mask_rois_.push_back(rois[static_cast<std::size_t>(r)]);
      Tensor<T> f_obj = gather_rois(pyr, mask_rois_, cfg_.mask_roi, mask_levels_);
      if (cfg_.variant == Variant::opmask) {
        resize_ = BilinearResize<T>(cfg_.box_roi, cfg_.box_roi, cfg_.mask_roi, cfg_.mask_roi);
        f_obj = inject_prior(f_obj, out.prior);
      }
      out.mask_logits = mask_head_->forward(f_obj, mode);
      mask_ran_ = true;
    } else if (mask_head_) {
      out.mask_logits = Tensor<T>({0, 1, cfg_.mask_out(), cfg_.mask_out()});
    }
    return out;
  }

  // Accumulates parameter gradients for the last forward() call.
  void backward(const Tensor<T>& d_cls, const Tensor<T>& d_deltas, const Tensor<T>& d_mask_logits) {
    FeaturePyramid<T> grads;
    for (int l = 0; l < 3; ++l) grads.levels[l] = Tensor<T>(pyramid_shapes_[l]);
    Tensor<T> d_fbox_extra;

    if (mask_ran_ && !d_mask_logits.empty()) {
      const Tensor<T> d_obj = mask_head_->backward(d_mask_logits);
      scatter_rois(d_obj, mask_rois_, mask_levels_, grads);
      if (cfg_.variant == Variant::opmask) {
        const int Rm = d_obj.n(), D = d_obj.c(), mhw = d_obj.h() * d_obj.w();
        Tensor<T> d_up({Rm, 1, d_obj.h(), d_obj.w()});
        for (int r = 0; r < Rm; ++r)
          for (int d = 0; d < D; ++d) {
            const T* src = d_obj.data() + (static_cast<std::size_t>(r) * D + d) * mhw;
            T* dst = d_up.data() + static_cast<std::size_t>(r) * mhw;
            for (int i = 0; i < mhw; ++i) dst[i] += src[i];
          }
        const Tensor<T> d_slice = resize_.backward(d_up);
        d_fbox_extra = Tensor<T>(f_box_.shape());
        auto& w = box_head_.classifier().weight();
        const int C = f_box_.c(), hw = f_box_.h() * f_box_.w();
        for (int r = 0; r < Rm; ++r) {
          const int ri = selection_.rois[static_cast<std::size_t>(r)];
          const int k = selection_.classes[static_cast<std::size_t>(r)];
          const T* g = d_slice.data() + static_cast<std::size_t>(r) * hw;
          for (int c = 0; c < C; ++c) {
            const T wk = w.value.at(k, c);
            T* dst = d_fbox_extra.data() + (static_cast<std::size_t>(ri) * C + c) * hw;
            const T* fb = f_box_.data() + (static_cast<std::size_t>(ri) * C + c) * hw;
            T acc{0};
            for (int i = 0; i < hw; ++i) {
              dst[i] += wk * g[i];
              acc += g[i] * fb[i];
            }
            w.grad.at(k, c) += acc;
          }
        }
      }
    }

    const Tensor<T> d_box_feats = box_head_.backward(d_cls, d_deltas, d_fbox_extra);
    scatter_rois(d_box_feats, rois_, box_levels_, grads);
    backbone_.backward(grads);
  }

  std::vector<Param<T>*> params() {
    auto ps = backbone_.params();
    for (auto* p : box_head_.params()) ps.push_back(p);
    if (mask_head_)
      for (auto* p : mask_head_->params()) ps.push_back(p);
    return ps;
  }

  std::vector<Buffer<T>*> buffers() {
    if (!mask_head_) return {};
    return mask_head_->buffers();
  }

  // Parameters and buffers under their checkpoint names.
  std::map<std::string, Tensor<T>*> named_tensors() {
    std::map<std::string, Tensor<T>*> m;
    for (auto* p : params()) m[p->name] = &p->value;
    for (auto* b : buffers()) m[b->name] = &b->value;
    return m;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

 private:
  static constexpr int kLevels = 3;

  Tensor<T> gather_rois(const FeaturePyramid<T>& pyr, const std::vector<RoiRef>& rois, int size,
                        std::array<std::vector<int>, kLevels>& levels) const {
    for (auto& l : levels) l.clear();
    for (int r = 0; r < static_cast<int>(rois.size()); ++r)
      levels[assign_level(rois[static_cast<std::size_t>(r)].box, cfg_.roi_level_base, kLevels)].push_back(r);
    const int D = cfg_.pyramid_channels;
    Tensor<T> out({static_cast<int>(rois.size()), D, size, size});
    const std::size_t per = static_cast<std::size_t>(D) * size * size;
    for (int l = 0; l < kLevels; ++l) {
      if (levels[l].empty()) continue;
      std::vector<RoiRef> sub;
      for (int r : levels[l]) sub.push_back(rois[static_cast<std::size_t>(r)]);
      const auto feats = roi_align(pyr.levels[l], sub, kPyramidStrides[l], size);
      for (std::size_t i = 0; i < sub.size(); ++i)
        std::copy_n(feats.data() + i * per, per, out.data() + static_cast<std::size_t>(levels[l][i]) * per);
    }
    return out;
  }

  void scatter_rois(const Tensor<T>& d, const std::vector<RoiRef>& rois,
                    const std::array<std::vector<int>, kLevels>& levels, FeaturePyramid<T>& grads) const {
    const int D = d.c(), size = d.h();
    const std::size_t per = static_cast<std::size_t>(D) * size * size;
    for (int l = 0; l < kLevels; ++l) {
      if (levels[l].empty()) continue;
      std::vector<RoiRef> sub;
      Tensor<T> dsub({static_cast<int>(levels[l].size()), D, size, size});
      for (std::size_t i = 0; i < levels[l].size(); ++i) {
        const int r = levels[l][i];
        sub.push_back(rois[static_cast<std::size_t>(r)]);
        std::copy_n(d.data() + static_cast<std::size_t>(r) * per, per, dsub.data() + i * per);
      }
      roi_align_backward(dsub, sub, kPyramidStrides[l], grads.levels[l]);
    }
  }

  Tensor<T> gather_prior(const Tensor<T>& cam, const MaskSelection& sel) const {
    const int b = cfg_.box_roi, K = cam.c(), hw = b * b;
    Tensor<T> prior({static_cast<int>(sel.rois.size()), 1, b, b});
    for (std::size_t i = 0; i < sel.rois.size(); ++i)
      std::copy_n(cam.data() + (static_cast<std::size_t>(sel.rois[i]) * K + sel.classes[i]) * hw, hw,
                  prior.data() + i * hw);
    return prior;
  }

  ModelConfig cfg_;
  Backbone<T> backbone_;
  BoxHead<T> box_head_;
  std::optional<MaskHead<T>> mask_head_;

  std::array<std::vector<int>, 3> pyramid_shapes_;
  std::vector<RoiRef> rois_, mask_rois_;
  std::array<std::vector<int>, kLevels> box_levels_, mask_levels_;
  Tensor<T> f_box_;
  MaskSelection selection_;
  BilinearResize<T> resize_;
  bool mask_ran_ = false;
};

// Packs images into a [B,3,H,W] tensor.
template <typename T, typename ImageRange>
inline Tensor<T> images_to_tensor(const ImageRange& images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const int H = images.front()->height, W = images.front()->width;
  Tensor<T> t({static_cast<int>(images.size()), 3, H, W});
  for (int b = 0; b < static_cast<int>(images.size()); ++b) {
    const auto& img = *images[static_cast<std::size_t>(b)];
    if (img.height != H || img.width != W) throw ShapeError("images_to_tensor: mixed image sizes");
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) t.at(b, ch, y, x) = static_cast<T>(img.at(y, x, ch));
  }
  return t;
}

}  // namespace opmask::nn
