#pragma once

#include <array>
#include <string>
#include <vector>

#include "opmask/core/error.hpp"
#include "opmask/core/tensor.hpp"
#include "opmask/opmodel/config.hpp"
#include "opmask/opmodel/layers.hpp"

namespace opmask::nn {

template <typename T>
struct BoxHeadOutput {
  Tensor<T> f_box;       // [R,C,b,b] last conv map, before pooling
  Tensor<T> pooled;      // [R,C]
  Tensor<T> cls_logits;  // [R,K+1]
  Tensor<T> box_deltas;  // [R,4]
};

// Four 3x3 conv + ReLU layers, global average pooling, then linear
// classification and class-agnostic box regression.
template <typename T>
class BoxHead {
 public:
  static constexpr int kConvs = 4;

  BoxHead() = default;
  explicit BoxHead(const ModelConfig& cfg) : in_(cfg.pyramid_channels), size_(cfg.box_roi) {
    const int C = cfg.box_head_channels;
    for (int i = 0; i < kConvs; ++i)
      convs_[i] = Conv2d<T>("box_head.conv" + std::to_string(i + 1), i == 0 ? in_ : C, C, 3, 1, 1);
    cls_ = Linear<T>("box_head.cls", C, cfg.num_logits());
    reg_ = Linear<T>("box_head.reg", C, 4);
  }

  void init(Rng& rng) {
    for (auto& c : convs_) c.init(rng);
    cls_.init(rng, 0.01);
    reg_.init(rng, 0.001);
  }

  BoxHeadOutput<T> forward(const Tensor<T>& roi_features) {
    require_shape(roi_features, {roi_features.n(), in_, size_, size_}, "box head input");
    Tensor<T> x = roi_features;
    for (int i = 0; i < kConvs; ++i) x = relus_[i].forward(convs_[i].forward(x));
    BoxHeadOutput<T> out;
    out.f_box = x;
    f_box_shape_ = x.shape();
    out.pooled = global_average_pool(x);
    out.cls_logits = cls_.forward(out.pooled);
    out.box_deltas = reg_.forward(out.pooled);
    return out;
  }

  // `d_f_box_extra` carries gradient reaching F_box directly (through the CAM
  // prior); empty when there is none.
  Tensor<T> backward(const Tensor<T>& d_logits, const Tensor<T>& d_deltas, const Tensor<T>& d_f_box_extra) {
    Tensor<T> d_pooled = cls_.backward(d_logits);
    d_pooled += reg_.backward(d_deltas);
    Tensor<T> dx = global_average_pool_backward(d_pooled, f_box_shape_);
    if (!d_f_box_extra.empty()) dx += d_f_box_extra;
    for (int i = kConvs - 1; i >= 0; --i) dx = convs_[i].backward(relus_[i].backward(dx));
    return dx;
  }

  Linear<T>& classifier() { return cls_; }
  const Linear<T>& classifier() const { return cls_; }

  std::vector<Param<T>*> conv_params() {
    std::vector<Param<T>*> ps;
    for (auto& c : convs_)
      for (auto* p : c.params()) ps.push_back(p);
    return ps;
  }

  std::vector<Param<T>*> params() {
    auto ps = conv_params();
    for (auto* p : cls_.params()) ps.push_back(p);
    for (auto* p : reg_.params()) ps.push_back(p);
    return ps;
  }

 private:
  int in_ = 0, size_ = 0;
  std::array<Conv2d<T>, kConvs> convs_;
  std::array<ReLU<T>, kConvs> relus_;
  Linear<T> cls_, reg_;
  std::vector<int> f_box_shape_;
};

// Seven 3x3 conv + batch norm + ReLU blocks, a stride-2 transposed conv
// (+ ReLU) doubling the resolution, and a 1x1 conv to one mask logit.
// Seven 3x3 layers give a 15x15 receptive field, which covers a 14x14 RoI.
template <typename T>
class MaskHead {
 public:
  static constexpr int kConvs = 7;

  MaskHead() = default;
  explicit MaskHead(const ModelConfig& cfg) : in_(cfg.pyramid_channels), size_(cfg.mask_roi) {
    const int M = cfg.mask_head_channels;
    for (int i = 0; i < kConvs; ++i) {
      const auto n = std::to_string(i + 1);
      convs_[i] = Conv2d<T>("mask_head.conv" + n, i == 0 ? in_ : M, M, 3, 1, 1);
      bns_[i] = BatchNorm2d<T>("mask_head.bn" + n, M);
    }
    deconv_ = ConvTranspose2x2<T>("mask_head.deconv", M, M);
    predictor_ = Conv2d<T>("mask_head.predictor", M, 1, 1, 1, 0);
  }

  void init(Rng& rng) {
    for (int i = 0; i < kConvs; ++i) {
      convs_[i].init(rng);
      bns_[i].init(rng);
    }
    deconv_.init(rng);
    normal_init(predictor_.weight().value, 0.001, rng);
    predictor_.bias().value.zero();
  }

  // [R,D,m,m] -> mask logits [R,1,2m,2m].
  Tensor<T> forward(const Tensor<T>& x_in, Mode mode) {
    require_shape(x_in, {x_in.n(), in_, size_, size_}, "mask head input");
    Tensor<T> x = x_in;
    for (int i = 0; i < kConvs; ++i) x = relus_[i].forward(bns_[i].forward(convs_[i].forward(x), mode));
    x = deconv_relu_.forward(deconv_.forward(x));
    return predictor_.forward(x);
  }

  Tensor<T> backward(const Tensor<T>& d_logits) {
    Tensor<T> dx = deconv_.backward(deconv_relu_.backward(predictor_.backward(d_logits)));
    for (int i = kConvs - 1; i >= 0; --i) dx = convs_[i].backward(bns_[i].backward(relus_[i].backward(dx)));
    return dx;
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> ps;
    for (int i = 0; i < kConvs; ++i) {
      for (auto* p : convs_[i].params()) ps.push_back(p);
      for (auto* p : bns_[i].params()) ps.push_back(p);
    }
    for (auto* p : deconv_.params()) ps.push_back(p);
    for (auto* p : predictor_.params()) ps.push_back(p);
    return ps;
  }

  std::vector<Buffer<T>*> buffers() {
    std::vector<Buffer<T>*> bs;
    for (auto& bn : bns_)
      for (auto* b : bn.buffers()) bs.push_back(b);
    return bs;
  }

 private:
  int in_ = 0, size_ = 0;
  std::array<Conv2d<T>, kConvs> convs_;
  std::array<BatchNorm2d<T>, kConvs> bns_;
  std::array<ReLU<T>, kConvs> relus_;
  ConvTranspose2x2<T> deconv_;
  ReLU<T> deconv_relu_;
  Conv2d<T> predictor_;
};

}  // namespace opmask::nn
